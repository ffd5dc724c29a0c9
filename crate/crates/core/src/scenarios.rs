//! Weight perturbations, observed-versus-optimal validation and the
//! ice/whale log-ratio grid.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{GroupBy, PreparedRow};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::observation::{group_count, PreparedObservation};
use crate::par::ExecMode;
use crate::risk::{optimal_speeds, RiskWeights, SpeedGrid};
use crate::stats::{mean, median, pearson, quantile_sorted, sorted_copy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTarget {
    Whale,
    Ice,
}

impl FromStr for RiskTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whale" => Ok(RiskTarget::Whale),
            "ice" => Ok(RiskTarget::Ice),
            other => Err(Error::config(format!("unknown risk target '{other}' (expected whale or ice)"))),
        }
    }
}

impl fmt::Display for RiskTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskTarget::Whale => "whale",
            RiskTarget::Ice => "ice",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub target: RiskTarget,
    pub factor: f64,
}

impl PerturbationSpec {
    pub fn new(target: RiskTarget, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::config(format!("perturbation factor must be positive, got {factor}")));
        }
        Ok(PerturbationSpec { target, factor })
    }
}

/// Multiply the targeted weight of every group by the factor and
/// renormalize each pair to sum to one.
pub fn perturb_weights(w: &RiskWeights, spec: &PerturbationSpec) -> RiskWeights {
    let (theta_w, theta_i) = w
        .theta_w
        .iter()
        .zip(&w.theta_i)
        .map(|(&tw, &ti)| {
            let (a, b) = match spec.target {
                RiskTarget::Whale => (tw * spec.factor, ti),
                RiskTarget::Ice => (tw, ti * spec.factor),
            };
            let s = a + b;
            (a / s, b / s)
        })
        .unzip();
    RiskWeights {
        theta_w,
        theta_i,
        m: w.m,
    }
}

/// Optimal-speed change statistics for one (spec, group) pair. The
/// statistics are absent for groups without observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub target: RiskTarget,
    pub factor: f64,
    pub group: usize,
    pub n: usize,
    pub mean_delta: Option<f64>,
    pub median_delta: Option<f64>,
}

fn split_by_group(values: &[f64], observations: &[PreparedObservation], n_groups: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); n_groups];
    for (v, o) in values.iter().zip(observations) {
        out[o.group_index].push(*v);
    }
    out
}

fn check_groups(observations: &[PreparedObservation], fit: &FitResult) -> Result<usize> {
    let n_groups = fit.weights.n_groups();
    if group_count(observations) > n_groups {
        return Err(Error::input(format!(
            "data has more groups than the {n_groups} in the fit"
        )));
    }
    Ok(n_groups)
}

/// Change in model-implied optimal speed under each perturbation, per
/// group: one row per (spec, group), specs in the given order.
pub fn sensitivity_report(
    observations: &[PreparedObservation],
    fit: &FitResult,
    grid: &SpeedGrid,
    specs: &[PerturbationSpec],
    mode: ExecMode,
) -> Result<Vec<SensitivityRow>> {
    let n_groups = check_groups(observations, fit)?;
    let base = optimal_speeds(observations, &fit.weights, &fit.scaling, grid, mode);
    let mut rows = Vec::with_capacity(specs.len() * n_groups);
    for spec in specs {
        let moved = perturbed_optimal_speeds(observations, fit, grid, spec, mode);
        let deltas: Vec<f64> = moved.iter().zip(&base).map(|(p, b)| p - b).collect();
        for (g, d) in split_by_group(&deltas, observations, n_groups).into_iter().enumerate() {
            rows.push(SensitivityRow {
                target: spec.target,
                factor: spec.factor,
                group: g,
                n: d.len(),
                mean_delta: mean(&d),
                median_delta: median(&d),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    /// `None` for the all-groups row.
    pub group: Option<usize>,
    pub n: usize,
    /// Blank when either speed series is constant or `n < 2`.
    pub correlation: Option<f64>,
    pub mean_observed: Option<f64>,
    pub mean_optimal: Option<f64>,
}

/// Pearson correlation and means of observed and optimal speed per group,
/// followed by the all-groups row.
pub fn validation_report(
    observations: &[PreparedObservation],
    fit: &FitResult,
    grid: &SpeedGrid,
    mode: ExecMode,
) -> Result<Vec<ValidationRow>> {
    let n_groups = check_groups(observations, fit)?;
    let optimal = optimal_speeds(observations, &fit.weights, &fit.scaling, grid, mode);
    let observed: Vec<f64> = observations.iter().map(|o| o.v_obs).collect();
    let row = |group, obs: &[f64], opt: &[f64]| ValidationRow {
        group,
        n: obs.len(),
        correlation: pearson(obs, opt),
        mean_observed: mean(obs),
        mean_optimal: mean(opt),
    };
    let by_obs = split_by_group(&observed, observations, n_groups);
    let by_opt = split_by_group(&optimal, observations, n_groups);
    let mut rows: Vec<ValidationRow> = (0..n_groups)
        .map(|g| row(Some(g), &by_obs[g], &by_opt[g]))
        .collect();
    rows.push(row(None, &observed, &optimal));
    Ok(rows)
}

/// How observations are binned in space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKey {
    /// Use the `cell_id` column.
    Column,
    /// Square bins of this many degrees, keyed by their south-west corner.
    Degrees(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatioGridConfig {
    pub cell: CellKey,
    pub trim_lo: f64,
    pub trim_hi: f64,
    pub min_count: usize,
    /// Floor applied to both means before taking the ratio.
    pub epsilon: f64,
    /// Produce one grid per group label instead of pooling groups.
    pub group_by: Option<GroupBy>,
}

impl Default for RatioGridConfig {
    fn default() -> Self {
        RatioGridConfig {
            cell: CellKey::Column,
            trim_lo: 0.01,
            trim_hi: 0.99,
            min_count: 5,
            epsilon: 1e-6,
            group_by: None,
        }
    }
}

impl RatioGridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.trim_lo && self.trim_lo < self.trim_hi && self.trim_hi <= 1.0) {
            return Err(Error::config(format!(
                "trim quantiles must satisfy 0 <= lo < hi <= 1, got {} and {}",
                self.trim_lo, self.trim_hi
            )));
        }
        if self.min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let CellKey::Degrees(d) = self.cell {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::config(format!("cell size must be positive, got {d}")));
            }
        }
        Ok(())
    }

    fn cell_of(&self, row: &PreparedRow) -> String {
        match self.cell {
            CellKey::Column => row.cell_id.clone(),
            CellKey::Degrees(d) => {
                let lat = (row.lat / d).floor() * d;
                let lon = (row.lon / d).floor() * d;
                format!("{lat}:{lon}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub cell: String,
    pub month: u32,
    /// Group label when the grid is split by group.
    pub group: Option<String>,
    pub n: usize,
    pub mean_ice: f64,
    pub mean_whale: f64,
    /// `log10(max(mean_ice, eps) / max(mean_whale, eps))`, after
    /// winsorizing.
    pub log_ratio: f64,
    pub raw_log_ratio: f64,
}

/// Order-independent mean: members are summed in sorted order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per (cell, month[, group]) log10 ratio of mean ice to mean whale
/// intensity over cells with at least `min_count` rows, winsorized at the
/// trim quantiles. Output is sorted by key.
pub fn ratio_grid(rows: &[PreparedRow], config: &RatioGridConfig) -> Result<Vec<RatioCell>> {
    config.validate()?;
    type Key = (String, u32, Option<String>);
    let mut members: BTreeMap<Key, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let group = config.group_by.map(|g| g.label(r));
        let entry = members.entry((config.cell_of(r), r.month, group)).or_default();
        entry.0.push(r.ice_tenths);
        entry.1.push(r.whale);
    }
    let mut cells: Vec<RatioCell> = members
        .into_iter()
        .filter(|(_, (ice, _))| ice.len() >= config.min_count)
        .map(|((cell, month, group), (mut ice, mut whale))| {
            let mean_ice = stable_mean(&mut ice);
            let mean_whale = stable_mean(&mut whale);
            let raw = (mean_ice.max(config.epsilon) / mean_whale.max(config.epsilon)).log10();
            RatioCell {
                cell,
                month,
                group,
                n: ice.len(),
                mean_ice,
                mean_whale,
                log_ratio: raw,
                raw_log_ratio: raw,
            }
        })
        .collect();
    // Trim bounds are taken per grid, so a split grid is trimmed per group.
    let mut by_grid: BTreeMap<Option<String>, Vec<usize>> = BTreeMap::new();
    for (k, c) in cells.iter().enumerate() {
        by_grid.entry(c.group.clone()).or_default().push(k);
    }
    for idx in by_grid.values() {
        let values: Vec<f64> = idx.iter().map(|&k| cells[k].raw_log_ratio).collect();
        let sorted = sorted_copy(&values);
        let lo = quantile_sorted(&sorted, config.trim_lo).expect("non-empty");
        let hi = quantile_sorted(&sorted, config.trim_hi).expect("non-empty");
        for &k in idx {
            cells[k].log_ratio = cells[k].raw_log_ratio.clamp(lo, hi);
        }
    }
    Ok(cells)
}

/// Per-observation optimal speeds under perturbed weights.
pub fn perturbed_optimal_speeds(
    observations: &[PreparedObservation],
    fit: &FitResult,
    grid: &SpeedGrid,
    spec: &PerturbationSpec,
    mode: ExecMode,
) -> Vec<f64> {
    optimal_speeds(observations, &perturb_weights(&fit.weights, spec), &fit.scaling, grid, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::row;
    use crate::estimator::EtaVector;
    use crate::risk::ScalingConstants;
    use proptest::prelude::*;

    fn weights(w: &[f64]) -> RiskWeights {
        RiskWeights::from_whale_weights(w.to_vec(), 2).unwrap()
    }

    #[test]
    fn perturbation_examples() {
        let p = perturb_weights(&weights(&[0.5]), &PerturbationSpec::new(RiskTarget::Whale, 2.0).unwrap());
        assert!((p.theta_w[0] - 2.0 / 3.0).abs() < 1e-15 && (p.theta_i[0] - 1.0 / 3.0).abs() < 1e-15);
        let cargo = RiskWeights::new(vec![0.2334], vec![0.7666], 2).unwrap();
        let p = perturb_weights(&cargo, &PerturbationSpec::new(RiskTarget::Ice, 2.0).unwrap());
        assert!((p.theta_w[0] - 0.1321).abs() < 5e-5 && (p.theta_i[0] - 0.8679).abs() < 5e-5);
        let w = weights(&[0.1, 0.37, 1.0]);
        assert_eq!(perturb_weights(&w, &PerturbationSpec::new(RiskTarget::Ice, 1.0).unwrap()), w);
        assert!(PerturbationSpec::new(RiskTarget::Ice, 0.0).is_err());
        assert!(PerturbationSpec::new(RiskTarget::Ice, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn perturbation_stays_on_simplex(tw in 0.0f64..=1.0, f in 0.01f64..100.0) {
            let w = weights(&[tw]);
            let a = perturb_weights(&w, &PerturbationSpec::new(RiskTarget::Whale, f).unwrap());
            let b = perturb_weights(&w, &PerturbationSpec::new(RiskTarget::Ice, 1.0 / f).unwrap());
            prop_assert!((a.theta_w[0] + a.theta_i[0] - 1.0).abs() <= 1e-12);
            prop_assert!((a.theta_w[0] - b.theta_w[0]).abs() <= 1e-12);
            prop_assert!((a.theta_i[0] - b.theta_i[0]).abs() <= 1e-12);
        }
    }

    fn fit_with(w: &[f64]) -> FitResult {
        let weights = weights(w);
        FitResult {
            eta_hat: EtaVector::zeros(w.len()),
            weights,
            objective_value: 0.0,
            n_obs: 0,
            scaling: ScalingConstants::new(1.0, 1.0, 1.0).unwrap(),
            m: 2,
            per_group_obs_counts: vec![0; w.len()],
            converged: true,
            n_evals: 0,
        }
    }

    fn obs(v: f64, mu: f64, d: f64, i: f64, g: usize) -> PreparedObservation {
        PreparedObservation::new(v, 0.1, mu, d, i, g, 0).unwrap()
    }

    #[test]
    fn identity_perturbation_has_zero_deltas() {
        let data: Vec<_> = (0..40).map(|k| obs(5.0, 3.0 + k as f64 * 0.3, 0.2, 4.0, k % 3)).collect();
        let fit = fit_with(&[0.2, 0.5, 0.8]);
        let specs = [
            PerturbationSpec::new(RiskTarget::Whale, 1.0).unwrap(),
            PerturbationSpec::new(RiskTarget::Ice, 1.0).unwrap(),
        ];
        let rows = sensitivity_report(&data, &fit, &SpeedGrid::default(), &specs, ExecMode::Sequential).unwrap();
        assert_eq!(rows.len(), 6);
        for r in rows {
            assert_eq!(r.mean_delta, Some(0.0));
            assert_eq!(r.median_delta, Some(0.0));
        }
    }

    #[test]
    fn doubling_ice_never_speeds_up() {
        let data: Vec<_> = (0..60)
            .map(|k| obs(5.0, 2.0 + k as f64 * 0.2, 0.05, 8.0, 0))
            .collect();
        let fit = fit_with(&[0.3]);
        let specs = [PerturbationSpec::new(RiskTarget::Ice, 2.0).unwrap()];
        let grid = SpeedGrid::default();
        let rows = sensitivity_report(&data, &fit, &grid, &specs, ExecMode::Sequential).unwrap();
        assert!(rows[0].mean_delta.unwrap() <= 0.0);
        let moved = perturbed_optimal_speeds(&data, &fit, &grid, &specs[0], ExecMode::Parallel);
        let base = optimal_speeds(&data, &fit.weights, &fit.scaling, &grid, ExecMode::Sequential);
        assert!(moved.iter().zip(&base).all(|(m, b)| m <= b));
    }

    #[test]
    fn validation_rows_and_blanks() {
        // Group 1 has constant observed speed, so its correlation is blank.
        let mut data: Vec<_> = (0..20).map(|k| obs(1.0 + k as f64 * 0.5, 1.0 + k as f64 * 0.5, 0.0, 0.0, 0)).collect();
        data.extend((0..5).map(|k| obs(4.0, 3.0 + k as f64, 0.0, 0.0, 1)));
        let fit = fit_with(&[0.5, 0.5]);
        let rows = validation_report(&data, &fit, &SpeedGrid::default(), ExecMode::Sequential).unwrap();
        assert_eq!(rows.len(), 3);
        // With no whale or ice exposure the optimum is the baseline itself.
        assert!((rows[0].correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].correlation, None);
        assert_eq!(rows[2].group, None);
        assert_eq!(rows[2].n, 25);
        let r = rows[2].correlation.unwrap();
        assert!((-1.0..=1.0).contains(&r));
    }

    fn cell_row(cell: &str, month: u32, ice: f64, whale: f64) -> PreparedRow {
        let mut r = row("t", "Cargo", 0, 5.0, 5.0);
        r.cell_id = cell.into();
        r.month = month;
        r.ice_tenths = ice;
        r.whale = whale;
        r
    }

    #[test]
    fn ratio_grid_examples() {
        let mut rows = Vec::new();
        rows.extend((0..5).map(|_| cell_row("a", 8, 8.0, 0.8)));
        rows.extend((0..5).map(|_| cell_row("b", 8, 5.0, 0.0)));
        rows.extend((0..3).map(|_| cell_row("c", 8, 5.0, 1.0)));
        let cfg = RatioGridConfig {
            trim_lo: 0.0,
            trim_hi: 1.0,
            ..RatioGridConfig::default()
        };
        let cells = ratio_grid(&rows, &cfg).unwrap();
        assert_eq!(cells.len(), 2);
        assert!((cells[0].log_ratio - 1.0).abs() < 1e-12);
        assert!((cells[1].log_ratio - (5.0f64 / 1e-6).log10()).abs() < 1e-9);

        // Winsorized at the default trims, the floor-driven value is pulled in.
        let trimmed = ratio_grid(&rows, &RatioGridConfig::default()).unwrap();
        assert!(trimmed[1].log_ratio < trimmed[1].raw_log_ratio);
        assert!(trimmed.iter().all(|c| c.log_ratio.is_finite()));

        // No ice and no whales: both means floored, ratio 0.
        let zeros: Vec<_> = (0..5).map(|_| cell_row("z", 1, 0.0, 0.0)).collect();
        assert_eq!(ratio_grid(&zeros, &cfg).unwrap()[0].log_ratio, 0.0);
    }

    #[test]
    fn ratio_grid_by_group_and_degrees() {
        let mut rows: Vec<_> = (0..5).map(|_| cell_row("a", 8, 8.0, 0.8)).collect();
        rows.extend((0..5).map(|_| {
            let mut r = cell_row("a", 8, 2.0, 0.2);
            r.vessel_group = "Tanker".into();
            r
        }));
        let cfg = RatioGridConfig {
            group_by: Some(GroupBy::VesselGroup),
            ..RatioGridConfig::default()
        };
        let cells = ratio_grid(&rows, &cfg).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].group.as_deref(), Some("Cargo"));
        let cfg = RatioGridConfig {
            cell: CellKey::Degrees(1.0),
            ..RatioGridConfig::default()
        };
        let pooled = ratio_grid(&rows, &cfg).unwrap();
        assert_eq!(pooled.len(), 1);
        assert_eq!(pooled[0].n, 10);
        assert!(RatioGridConfig { trim_lo: 0.5, trim_hi: 0.5, ..Default::default() }.validate().is_err());
        assert!(RatioGridConfig { min_count: 0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn ratio_grid_permutation_invariant(
            cells in proptest::collection::vec((0u8..4, 0.0f64..10.0, 0.0f64..3.0), 10..80),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let rows: Vec<_> = cells
                .iter()
                .map(|(c, i, d)| cell_row(&format!("c{c}"), 7, *i, *d))
                .collect();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let cfg = RatioGridConfig { min_count: 1, ..RatioGridConfig::default() };
            let a = ratio_grid(&rows, &cfg).unwrap();
            let b = ratio_grid(&shuffled, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.iter().all(|c| c.log_ratio.is_finite()));
        }
    }
}
