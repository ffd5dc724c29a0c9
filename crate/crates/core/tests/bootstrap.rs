use speedrisk::estimator::{fit, EstimationConfig};
use speedrisk::synth::{generate, SynthConfig};
use speedrisk::uncertainty::{bootstrap, BootstrapConfig};
use speedrisk::ExecMode;

fn corpus() -> Vec<speedrisk::observation::PreparedObservation> {
    let cfg = SynthConfig {
        n_obs: 6_000,
        trajectories_per_group: 60,
        theta_w: vec![0.3, 0.7],
        group_shares: vec![0.7, 0.3],
        ..SynthConfig::default()
    };
    generate(&cfg).unwrap().observations
}

#[test]
fn same_seed_same_replicates_in_either_mode() {
    let obs = corpus();
    let est = EstimationConfig::default();
    let full = fit(&obs, &est).unwrap();
    let cfg = BootstrapConfig {
        b: 8,
        seed: 11,
        ..BootstrapConfig::default()
    };
    let a = bootstrap(&obs, &est, &cfg, Some(&full)).unwrap();
    let seq = EstimationConfig {
        exec: ExecMode::Sequential,
        ..est.clone()
    };
    let b = bootstrap(&obs, &seq, &cfg, Some(&full)).unwrap();
    assert_eq!(a.replicates, b.replicates);
    assert_eq!(a.groups, b.groups);

    let other = BootstrapConfig { seed: 12, ..cfg };
    let c = bootstrap(&obs, &est, &other, Some(&full)).unwrap();
    assert_ne!(a.matrix(), c.matrix());
}

#[test]
fn intervals_are_ordered_and_shares_preserved() {
    let obs = corpus();
    let est = EstimationConfig::default();
    let full = fit(&obs, &est).unwrap();
    let cfg = BootstrapConfig {
        b: 10,
        seed: 3,
        ..BootstrapConfig::default()
    };
    let s = bootstrap(&obs, &est, &cfg, Some(&full)).unwrap();
    assert!(s.failures.is_empty() && !s.unreliable);
    assert_eq!(s.replicates.len(), 10);
    assert!(s.max_share_deviation() <= 0.02, "{}", s.max_share_deviation());
    for g in &s.groups {
        assert!(0.0 <= g.theta_w_lo && g.theta_w_lo <= g.theta_w_hi && g.theta_w_hi <= 1.0, "{g:?}");
        assert!((g.mean_theta_w + g.mean_theta_i - 1.0).abs() < 1e-12);
    }
}

#[test]
fn cold_start_without_full_fit_runs() {
    let obs = corpus();
    let est = EstimationConfig::default();
    let cfg = BootstrapConfig {
        b: 3,
        warm_start: false,
        ..BootstrapConfig::default()
    };
    let s = bootstrap(&obs, &est, &cfg, None).unwrap();
    assert_eq!(s.replicates.len(), 3);
    let warm = BootstrapConfig { warm_start: true, ..cfg };
    assert!(bootstrap(&obs, &est, &warm, None).is_err());
}
