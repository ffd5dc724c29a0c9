use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use speedrisk::estimator::{penalized_objective, EstimationConfig};
use speedrisk::risk::{compute_scaling_with, optimal_speeds, RiskWeights};
use speedrisk::synth::{generate, SynthConfig};
use speedrisk::ExecMode;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn data(n_obs: usize) -> Vec<speedrisk::observation::PreparedObservation> {
    let cfg = SynthConfig {
        n_obs,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("synthetic data").observations
}

fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("penalized_objective");
    group.sample_size(20);
    for n in [5_000, 50_000] {
        let obs = data(n);
        let scaling = compute_scaling_with(&obs, 2, ExecMode::Parallel).unwrap();
        for (name, mode) in MODES {
            let cfg = EstimationConfig {
                exec: mode,
                ..EstimationConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &obs, |b, obs| {
                b.iter(|| penalized_objective(&[0.3, -0.2, 1.1], obs, &cfg, &scaling).unwrap())
            });
        }
    }
    group.finish();
}

fn argmins(c: &mut Criterion) {
    let mut group = c.benchmark_group("optimal_speeds");
    group.sample_size(20);
    let obs = data(50_000);
    let weights = RiskWeights::from_whale_weights(vec![0.1, 0.5, 0.9], 2).unwrap();
    let scaling = compute_scaling_with(&obs, 2, ExecMode::Parallel).unwrap();
    let grid = speedrisk::risk::SpeedGrid::default();
    for (name, mode) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| optimal_speeds(&obs, &weights, &scaling, &grid, mode))
        });
    }
    group.finish();
}

fn scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("compute_scaling");
    let obs = data(50_000);
    for (name, mode) in MODES {
        group.bench_function(name, |b| b.iter(|| compute_scaling_with(&obs, 2, mode).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, objective, argmins, scaling);
criterion_main!(benches);
