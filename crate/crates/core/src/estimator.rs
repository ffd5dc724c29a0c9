//! Inverse estimation of per-group whale/ice trade-off weights.
//!
//! Each group `g` carries an unconstrained logit `eta[g]` with
//! `theta_w = 1 / (1 + e^eta)` and `theta_i = e^eta / (1 + e^eta)`. The fit
//! minimizes
//!
//! ```text
//! sum_n max(gap_n(theta(eta)), 0) + lambda * |eta|^2
//! ```
//!
//! over the box `[-ETA_BOUND, ETA_BOUND]^G` with the bounded trust-region
//! search in [`crate::optim`]. Scaling constants are computed once from the
//! observed speeds and held fixed while `eta` moves.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{group_count, group_counts, PreparedObservation};
use crate::optim::{self, TrustRegionOptions};
use crate::par::{self, ExecMode};
use crate::risk::{
    compute_scaling_with, ObservationRisk, RiskWeights, ScalingConstants, SpeedGrid,
    DEFAULT_EXPONENT,
};

pub const ETA_BOUND: f64 = 10.0;
pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_MAX_EVALS: usize = 2000;
pub const DEFAULT_REL_TOL: f64 = 1e-8;
/// Offset applied to the start for the optional extra starts.
pub const MULTISTART_OFFSET: f64 = 2.0;

/// Per-group logits, finite and within `±ETA_BOUND`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EtaVector(Vec<f64>);

impl EtaVector {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if let Some(bad) = eta.iter().find(|e| !(e.is_finite() && e.abs() <= ETA_BOUND)) {
            return Err(Error::config(format!(
                "logit {bad} outside [-{ETA_BOUND}, {ETA_BOUND}]"
            )));
        }
        Ok(EtaVector(eta))
    }

    pub fn zeros(n_groups: usize) -> Self {
        EtaVector(vec![0.0; n_groups])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|e| e * e).sum()
    }
}

impl TryFrom<Vec<f64>> for EtaVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        EtaVector::new(v)
    }
}

impl From<EtaVector> for Vec<f64> {
    fn from(e: EtaVector) -> Self {
        e.0
    }
}

/// `(theta_w, theta_i)` for one logit. The smaller weight is computed
/// directly and the larger one as its complement.
pub fn logistic_pair(eta: f64) -> (f64, f64) {
    if eta <= 0.0 {
        let e = eta.exp();
        let theta_i = e / (1.0 + e);
        (1.0 - theta_i, theta_i)
    } else {
        let theta_w = 1.0 / (1.0 + eta.exp());
        (theta_w, 1.0 - theta_w)
    }
}

/// Logit that produces whale weight `theta_w`.
pub fn eta_for_whale_weight(theta_w: f64) -> f64 {
    ((1.0 - theta_w) / theta_w).ln()
}

pub fn logit_to_weights(eta: &[f64], m: u32) -> RiskWeights {
    let (theta_w, theta_i) = eta.iter().map(|&e| logistic_pair(e)).unzip();
    RiskWeights { theta_w, theta_i, m }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub lambda: f64,
    pub grid: SpeedGrid,
    pub m: u32,
    pub max_evals: usize,
    pub rel_tol: f64,
    /// Starting logits; zeros when absent.
    pub init: Option<EtaVector>,
    /// Number of groups; inferred from the data when absent.
    pub n_groups: Option<usize>,
    pub seed: u64,
    /// Also start from `init ± MULTISTART_OFFSET` and keep the best.
    pub multistart: bool,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            lambda: DEFAULT_LAMBDA,
            grid: SpeedGrid::default(),
            m: DEFAULT_EXPONENT,
            max_evals: DEFAULT_MAX_EVALS,
            rel_tol: DEFAULT_REL_TOL,
            init: None,
            n_groups: None,
            seed: 0,
            multistart: false,
            exec: ExecMode::default(),
        }
    }
}

impl EstimationConfig {
    fn validate(&self, n_groups: usize) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.m == 0 {
            return Err(Error::config("acoustic exponent must be a positive integer"));
        }
        if self.max_evals < n_groups + 2 {
            return Err(Error::config(format!(
                "max_evals {} below G + 2 = {}",
                self.max_evals,
                n_groups + 2
            )));
        }
        if let Some(init) = &self.init {
            if init.len() != n_groups {
                return Err(Error::config(format!(
                    "init has {} logits but the data has {n_groups} groups",
                    init.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub eta_hat: EtaVector,
    pub weights: RiskWeights,
    pub objective_value: f64,
    pub n_obs: usize,
    pub scaling: ScalingConstants,
    pub m: u32,
    pub per_group_obs_counts: Vec<usize>,
    pub converged: bool,
    pub n_evals: usize,
}

/// Observations bucketed by group, remembering their input positions, so
/// the clamped-gap sum can be evaluated one group at a time.
struct GroupedGaps<'a> {
    groups: Vec<Vec<PreparedObservation>>,
    positions: Vec<Vec<usize>>,
    config: &'a EstimationConfig,
    scaling: ScalingConstants,
}

impl<'a> GroupedGaps<'a> {
    fn new(
        observations: &[PreparedObservation],
        n_groups: usize,
        config: &'a EstimationConfig,
        scaling: ScalingConstants,
    ) -> Result<Self> {
        let mut groups = vec![Vec::new(); n_groups];
        let mut positions = vec![Vec::new(); n_groups];
        for (n, o) in observations.iter().enumerate() {
            let g = o.group_index;
            if g >= n_groups {
                return Err(Error::input(format!(
                    "group index {g} outside the {n_groups} configured groups"
                )));
            }
            groups[g].push(o.clone());
            positions[g].push(n);
        }
        Ok(GroupedGaps {
            groups,
            positions,
            config,
            scaling,
        })
    }

    /// Sum of clamped gaps over group `g` at logit `eta_g`.
    fn group_sum(&self, g: usize, eta_g: f64) -> Result<f64> {
        let (theta_w, theta_i) = logistic_pair(eta_g);
        let (m, grid, scaling) = (self.config.m, &self.config.grid, &self.scaling);
        par::try_sum(self.config.exec, &self.groups[g], |_, o| {
            let risk = ObservationRisk::with_weights(o, theta_w, theta_i, m, scaling);
            let gap = risk.eval(o.v_obs) - risk.grid_min_convex(grid).1;
            // `max` would swallow a NaN, so only clamp finite gaps.
            if gap.is_finite() {
                gap.max(0.0)
            } else {
                f64::NAN
            }
        })
        .map_err(|i| Error::NonFinite {
            index: self.positions[g][i],
        })
    }

    /// Full penalized objective, reusing cached group sums where `eta[g]`
    /// was seen before.
    fn objective(&self, eta: &[f64], cache: &mut [HashMap<u64, f64>]) -> Result<f64> {
        let mut total = 0.0;
        for (g, &e) in eta.iter().enumerate() {
            if self.groups[g].is_empty() {
                continue;
            }
            let sum = match cache.get(g).and_then(|c| c.get(&e.to_bits())) {
                Some(&v) => v,
                None => {
                    let v = self.group_sum(g, e)?;
                    if let Some(c) = cache.get_mut(g) {
                        c.insert(e.to_bits(), v);
                    }
                    v
                }
            };
            total += sum;
        }
        let penalty: f64 = eta.iter().map(|e| e * e).sum();
        Ok(total + self.config.lambda * penalty)
    }
}

/// Clamped-gap sum plus ridge penalty at `eta`, one logit per group.
///
/// Gaps are summed per group in group order. A non-finite contribution
/// fails with the input position of the offending observation.
pub fn penalized_objective(
    eta: &[f64],
    observations: &[PreparedObservation],
    config: &EstimationConfig,
    scaling: &ScalingConstants,
) -> Result<f64> {
    GroupedGaps::new(observations, eta.len(), config, *scaling)?.objective(eta, &mut [])
}

/// Fit with scaling constants computed from `observations`.
pub fn fit(observations: &[PreparedObservation], config: &EstimationConfig) -> Result<FitResult> {
    if observations.is_empty() {
        return Err(Error::input("no observations to fit"));
    }
    let scaling = compute_scaling_with(observations, config.m, config.exec)?;
    fit_with_scaling(observations, config, scaling)
}

/// Fit with caller-supplied scaling constants.
pub fn fit_with_scaling(
    observations: &[PreparedObservation],
    config: &EstimationConfig,
    scaling: ScalingConstants,
) -> Result<FitResult> {
    let n_groups = config
        .n_groups
        .unwrap_or_else(|| group_count(observations));
    let gaps = GroupedGaps::new(observations, n_groups, config, scaling)?;
    config.validate(n_groups)?;
    let counts = group_counts(observations, n_groups);
    let active: Vec<usize> = (0..n_groups).filter(|&g| counts[g] > 0).collect();

    let start = config
        .init
        .clone()
        .unwrap_or_else(|| EtaVector::zeros(n_groups));
    let mut full = start.as_slice().to_vec();
    for (g, e) in full.iter_mut().enumerate() {
        if counts[g] == 0 {
            *e = 0.0;
        }
    }

    let expand = |x: &[f64], base: &[f64]| {
        let mut eta = base.to_vec();
        for (k, &g) in active.iter().enumerate() {
            eta[g] = x[k];
        }
        eta
    };
    let mut cache = vec![HashMap::new(); n_groups];
    let mut objective = |x: &[f64]| gaps.objective(&expand(x, &full), &mut cache);

    let opts = TrustRegionOptions {
        max_evals: config.max_evals,
        rel_tol: config.rel_tol,
        ..TrustRegionOptions::default()
    };
    let lower = vec![-ETA_BOUND; active.len()];
    let upper = vec![ETA_BOUND; active.len()];
    let x0: Vec<f64> = active.iter().map(|&g| full[g]).collect();

    let mut starts = vec![x0.clone()];
    if config.multistart {
        for shift in [MULTISTART_OFFSET, -MULTISTART_OFFSET] {
            starts.push(x0.iter().map(|v| (v + shift).clamp(-ETA_BOUND, ETA_BOUND)).collect());
        }
    }

    let mut best: Option<optim::Minimum> = None;
    let mut total_evals = 0;
    for s in &starts {
        let run = optim::minimize(&mut objective, s, &lower, &upper, &opts)?;
        total_evals += run.n_evals;
        if best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");

    let eta_hat = EtaVector::new(expand(&best.x, &full))?;
    let weights = logit_to_weights(eta_hat.as_slice(), config.m);
    Ok(FitResult {
        weights,
        objective_value: best.f,
        n_obs: observations.len(),
        scaling,
        m: config.m,
        per_group_obs_counts: counts,
        converged: best.converged,
        n_evals: total_evals,
        eta_hat,
    })
}

/// One row of the exponent-selection table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub m: u32,
    pub objective_value: f64,
    pub converged: bool,
    pub theta_w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExponentSelection {
    pub best_m: u32,
    pub table: Vec<ExponentRow>,
    pub fits: Vec<FitResult>,
}

pub const DEFAULT_EXPONENT_CANDIDATES: [u32; 3] = [1, 2, 3];

/// Fit once per candidate exponent (scaling recomputed for each) and pick
/// the lowest objective; ties go to the smallest exponent.
pub fn select_m(
    observations: &[PreparedObservation],
    config: &EstimationConfig,
    candidates: &[u32],
) -> Result<ExponentSelection> {
    if candidates.is_empty() {
        return Err(Error::config("no exponent candidates"));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let fits = par::map(config.exec, &sorted, |&m| {
        let cfg = EstimationConfig {
            m,
            ..config.clone()
        };
        fit(observations, &cfg).map_err(|e| Error::Exponent {
            m,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (k, f) in fits.iter().enumerate() {
        if f.objective_value < fits[best].objective_value {
            best = k;
        }
    }
    let table = fits
        .iter()
        .map(|f| ExponentRow {
            m: f.m,
            objective_value: f.objective_value,
            converged: f.converged,
            theta_w: f.weights.theta_w.clone(),
        })
        .collect();
    Ok(ExponentSelection {
        best_m: fits[best].m,
        table,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::subopt_gap;
    use proptest::prelude::*;

    fn obs(v: f64, mu: f64, d: f64, i: f64, g: usize) -> PreparedObservation {
        PreparedObservation::new(v, 0.1, mu, d, i, g, 0).unwrap()
    }

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic_pair(0.0), (0.5, 0.5));
        let (w, i) = logistic_pair(10.0);
        assert!((w - 4.5397868702434395e-5).abs() < 1e-15);
        assert!((i - 0.9999546021312976).abs() < 1e-15);
        let eta = eta_for_whale_weight(0.5193);
        assert!((eta + 0.07724).abs() < 1e-4);
        let (w, i) = logistic_pair(eta);
        assert!((w - 0.5193).abs() < 1e-12 && (i - 0.4807).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn simplex_holds(eta in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            let w = logit_to_weights(&eta, 2);
            for g in 0..eta.len() {
                prop_assert!((w.theta_w[g] + w.theta_i[g] - 1.0).abs() <= 1e-12);
                prop_assert!(w.theta_w[g] >= 0.0 && w.theta_i[g] >= 0.0);
            }
        }
    }

    #[test]
    fn eta_vector_bounds() {
        assert!(EtaVector::new(vec![0.0, 10.0, -10.0]).is_ok());
        assert!(EtaVector::new(vec![10.5]).is_err());
        assert!(EtaVector::new(vec![f64::NAN]).is_err());
        let parsed: std::result::Result<EtaVector, _> = serde_json::from_str("[11.0]");
        assert!(parsed.is_err());
    }

    #[test]
    fn objective_hand_values() {
        let s = ScalingConstants::new(1.0, 1.0, 1.0).unwrap();
        let cfg = EstimationConfig {
            lambda: 0.1,
            exec: ExecMode::Sequential,
            ..EstimationConfig::default()
        };
        // Both on their argmin with eta = 0: zero.
        let data = vec![obs(5.0, 5.0, 0.0, 0.0, 0), obs(3.0, 3.0, 0.0, 0.0, 1)];
        assert_eq!(penalized_objective(&[0.0, 0.0], &data, &cfg, &s).unwrap(), 0.0);

        // A single observation whose gap is independent of eta (no whale, no ice).
        // dt = 0.1, mu = 5, v_obs = 5 + sqrt(6): raw gap 0.1 * 0.5 * 6 = 0.3.
        let o = obs(5.0 + 6f64.sqrt(), 5.0, 0.0, 0.0, 0);
        let o2 = PreparedObservation { group_index: 1, ..obs(5.0, 5.0, 0.0, 0.0, 1) };
        let gap = subopt_gap(&o, &logit_to_weights(&[1.0, -1.0], 2), &s, &cfg.grid);
        assert!((gap - 0.3).abs() < 1e-12);
        let v = penalized_objective(&[1.0, -1.0], &[o, o2], &cfg, &s).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        // Off-grid observation beating the grid contributes nothing.
        let off = obs(7.25, 7.25, 0.0, 0.0, 0);
        let cfg0 = EstimationConfig { lambda: 0.0, ..cfg.clone() };
        assert_eq!(penalized_objective(&[0.0], &[off], &cfg0, &s).unwrap(), 0.0);
    }

    #[test]
    fn objective_reports_non_finite_index() {
        let s = ScalingConstants::new(1.0, 1.0, 1.0).unwrap();
        let mut data = vec![obs(5.0, 5.0, 0.0, 0.0, 0); 3];
        data[2].mu = f64::NAN;
        let err = penalized_objective(&[0.0], &data, &EstimationConfig::default(), &s).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 2 }));
    }

    #[test]
    fn inert_environment_shrinks_to_neutral() {
        let data: Vec<_> = (0..200)
            .map(|k| obs(2.0 + (k % 17) as f64 * 0.3, 4.0, 0.0, 0.0, k % 2))
            .collect();
        let cfg = EstimationConfig {
            init: Some(EtaVector::new(vec![3.0, -2.0]).unwrap()),
            ..EstimationConfig::default()
        };
        let f = fit(&data, &cfg).unwrap();
        for g in 0..2 {
            assert!(f.eta_hat.as_slice()[g].abs() < 1e-3, "{f:?}");
            assert!((f.weights.theta_w[g] - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn absent_group_fixed_at_zero() {
        let data: Vec<_> = (0..50).map(|k| obs(3.0 + k as f64 * 0.1, 4.0, 1.0, 2.0, 0)).collect();
        let cfg = EstimationConfig {
            n_groups: Some(3),
            init: Some(EtaVector::new(vec![1.0, 4.0, -4.0]).unwrap()),
            ..EstimationConfig::default()
        };
        let f = fit(&data, &cfg).unwrap();
        assert_eq!(f.per_group_obs_counts, vec![50, 0, 0]);
        assert_eq!(&f.eta_hat.as_slice()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let data = vec![obs(3.0, 3.0, 0.0, 0.0, 0)];
        let bad = EstimationConfig { lambda: -1.0, ..EstimationConfig::default() };
        assert!(matches!(fit(&data, &bad), Err(Error::Config(_))));
        let bad = EstimationConfig { max_evals: 2, ..EstimationConfig::default() };
        assert!(matches!(fit(&data, &bad), Err(Error::Config(_))));
        let bad = EstimationConfig { init: Some(EtaVector::zeros(4)), ..EstimationConfig::default() };
        assert!(matches!(fit(&data, &bad), Err(Error::Config(_))));
        assert!(fit(&[], &EstimationConfig::default()).is_err());
    }

    #[test]
    fn select_m_ties_to_smallest_without_whales() {
        let data: Vec<_> = (0..300)
            .map(|k| obs(1.0 + (k % 23) as f64 * 0.4, 5.0, 0.0, (k % 11) as f64 * 0.9, k % 2))
            .collect();
        let sel = select_m(&data, &EstimationConfig::default(), &[3, 2, 1]).unwrap();
        assert_eq!(sel.best_m, 1);
        assert_eq!(sel.table.len(), 3);
        assert!(sel.table.iter().all(|r| r.objective_value.is_finite()));
        assert_eq!(sel.table[0].objective_value, sel.table[1].objective_value);
        assert_eq!(sel.table[1].objective_value, sel.table[2].objective_value);
    }
}
