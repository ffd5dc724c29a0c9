use proptest::prelude::*;
use speedrisk::dataset::{to_analysis, GroupBy};
use speedrisk::estimator::{fit, EstimationConfig};
use speedrisk::ingest::{cache, prepare, read_ais_csv, ColumnMap, PrepareOptions, WhaleGrid};
use speedrisk::risk::RiskWeights;
use speedrisk::sample::{generate_raw, write_reports, write_whale_grid, SampleConfig};
use speedrisk::scenarios::{perturb_weights, validation_report, PerturbationSpec, RiskTarget};
use speedrisk::ExecMode;

#[test]
fn raw_sample_to_validation() {
    let s = generate_raw(&SampleConfig::default()).unwrap();
    let mut ais = Vec::new();
    write_reports(&mut ais, &s.reports).unwrap();
    let mut whale = Vec::new();
    write_whale_grid(&mut whale, &s.whale_grid).unwrap();
    let (records, read) = read_ais_csv(ais.as_slice(), &ColumnMap::default()).unwrap();
    assert_eq!(read.rows, 1000);
    let grid = WhaleGrid::from_csv(whale.as_slice()).unwrap();
    let prepared = prepare(records, &grid, &PrepareOptions::default(), ExecMode::default()).unwrap();

    let rows = cache::decode(&cache::encode(&prepared.rows)).unwrap();
    assert_eq!(rows, prepared.rows);

    let data = to_analysis(&rows, GroupBy::VesselGroup).unwrap();
    assert_eq!(data.group_labels, ["Cargo", "Fishing", "Passenger", "Tanker", "Tug Tow"]);
    let est = EstimationConfig::default();
    let f = fit(&data.observations, &est).unwrap();
    assert!(f.converged);
    let report = validation_report(&data.observations, &f, &est.grid, ExecMode::default()).unwrap();
    let overall = report.last().unwrap();
    assert_eq!(overall.group, None);
    assert_eq!(overall.n, data.observations.len());
    assert!(overall.correlation.unwrap() > 0.5);
}

proptest! {
    #[test]
    fn whale_up_equals_ice_down(tw in 0.0f64..=1.0, f in 0.01f64..100.0) {
        let w = RiskWeights::from_whale_weights(vec![tw], 2).unwrap();
        let a = perturb_weights(&w, &PerturbationSpec::new(RiskTarget::Whale, f).unwrap());
        let b = perturb_weights(&w, &PerturbationSpec::new(RiskTarget::Ice, 1.0 / f).unwrap());
        prop_assert!((a.theta_w[0] - b.theta_w[0]).abs() < 1e-12);
        prop_assert!((a.theta_i[0] - b.theta_i[0]).abs() < 1e-12);
    }
}
