//! Stratified trajectory bootstrap for the fitted weights.
//!
//! Strata are groups; within a stratum the resampling unit is a trajectory
//! (all of its observations in that group). Each replicate draws units with
//! replacement until the stratum's share of `n_boot` is reached, keeping the
//! last unit even when it overshoots.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, fit_with_scaling, EstimationConfig, FitResult};
use crate::observation::{group_count, PreparedObservation};
use crate::par::{self, ExecMode};
use crate::stats::{mean, quantile};

pub const DEFAULT_REPLICATES: usize = 300;
pub const DEFAULT_N_BOOT: usize = 1_000_000;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;
/// Failure share above which a summary is flagged unreliable.
pub const UNRELIABLE_FAILURE_SHARE: f64 = 0.2;
/// Allowed absolute deviation of a stratum's share in a replicate.
pub const SHARE_TOLERANCE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    /// Number of replicates.
    pub b: usize,
    /// Target observations per replicate. When absent, the smaller of
    /// [`DEFAULT_N_BOOT`] and the dataset size.
    pub n_boot: Option<usize>,
    pub seed: u64,
    /// Start each replicate at the full-data logits instead of zero.
    pub warm_start: bool,
    pub ci_level: f64,
    /// Reuse the full-data scaling constants instead of recomputing them
    /// on each replicate.
    pub freeze_scaling: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: DEFAULT_REPLICATES,
            n_boot: None,
            seed: 0,
            warm_start: true,
            ci_level: DEFAULT_CI_LEVEL,
            freeze_scaling: false,
        }
    }
}

impl BootstrapConfig {
    /// Replicate size for a dataset of `n_obs` observations.
    pub fn effective_n_boot(&self, n_obs: usize) -> usize {
        self.n_boot.unwrap_or(DEFAULT_N_BOOT.min(n_obs))
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::config("bootstrap needs at least one replicate"));
        }
        if self.n_boot == Some(0) {
            return Err(Error::config("n_boot must be at least 1"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::config(format!("ci_level must lie in (0, 1), got {}", self.ci_level)));
        }
        Ok(())
    }
}

/// Resampling units grouped by stratum.
#[derive(Clone, Debug)]
pub struct Strata {
    /// Per group, the observation indices of each (trajectory, group) unit.
    units: Vec<Vec<Vec<usize>>>,
    counts: Vec<usize>,
    n_obs: usize,
}

impl Strata {
    pub fn new(observations: &[PreparedObservation], n_groups: usize) -> Result<Self> {
        let mut by_unit: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); n_groups];
        for (n, o) in observations.iter().enumerate() {
            let g = o.group_index;
            let stratum = by_unit.get_mut(g).ok_or_else(|| {
                Error::input(format!("group index {g} outside the {n_groups} configured groups"))
            })?;
            stratum.entry(o.trajectory_id).or_default().push(n);
        }
        let units: Vec<Vec<Vec<usize>>> = by_unit
            .into_iter()
            .map(|m| m.into_values().collect())
            .collect();
        let counts = units
            .iter()
            .map(|u| u.iter().map(Vec::len).sum())
            .collect();
        Ok(Strata {
            units,
            counts,
            n_obs: observations.len(),
        })
    }

    pub fn n_groups(&self) -> usize {
        self.units.len()
    }

    pub fn n_units(&self, g: usize) -> usize {
        self.units[g].len()
    }

    /// Observation count per stratum in the full data.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Per-stratum target for a replicate of `n_boot` observations.
    /// Non-empty strata get at least one unit.
    pub fn targets(&self, n_boot: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    return 0;
                }
                let t = (n_boot as f64 * c as f64 / self.n_obs as f64).round() as usize;
                t.max(1)
            })
            .collect()
    }

    /// Observation indices of replicate `replicate`, stratum by stratum.
    pub fn sample(&self, n_boot: usize, seed: u64, replicate: u64) -> Vec<usize> {
        let mut rng = replicate_rng(seed, replicate);
        let mut out = Vec::with_capacity(n_boot + 64);
        for (g, target) in self.targets(n_boot).into_iter().enumerate() {
            let units = &self.units[g];
            if units.is_empty() {
                continue;
            }
            let mut taken = 0;
            while taken < target {
                let u = &units[rng.random_range(0..units.len())];
                out.extend_from_slice(u);
                taken += u.len();
            }
        }
        out
    }

    /// Largest absolute difference between a replicate's stratum shares
    /// and the full-data shares.
    pub fn share_deviation(&self, observations: &[PreparedObservation], indices: &[usize]) -> f64 {
        if indices.is_empty() || self.n_obs == 0 {
            return 0.0;
        }
        let mut counts = vec![0usize; self.n_groups()];
        for &i in indices {
            counts[observations[i].group_index] += 1;
        }
        counts
            .iter()
            .zip(&self.counts)
            .map(|(&c, &full)| {
                (c as f64 / indices.len() as f64 - full as f64 / self.n_obs as f64).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Replicate streams are independent ChaCha streams of one master seed,
/// so replicates can run in any order.
fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Observations of one replicate, in draw order.
pub fn stratified_sample(
    observations: &[PreparedObservation],
    config: &BootstrapConfig,
    replicate: u64,
) -> Result<Vec<PreparedObservation>> {
    config.validate()?;
    let strata = Strata::new(observations, group_count(observations))?;
    Ok(strata
        .sample(config.effective_n_boot(observations.len()), config.seed, replicate)
        .into_iter()
        .map(|i| observations[i].clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub theta_w: Vec<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub max_share_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupInterval {
    pub group: usize,
    pub mean_theta_w: f64,
    pub theta_w_lo: f64,
    pub theta_w_hi: f64,
    pub mean_theta_i: f64,
    pub theta_i_lo: f64,
    pub theta_i_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub config: BootstrapConfig,
    /// Observations targeted per replicate.
    pub n_boot_effective: usize,
    pub groups: Vec<GroupInterval>,
    /// Successful replicates in index order.
    pub replicates: Vec<Replicate>,
    pub failures: Vec<ReplicateFailure>,
    pub unreliable: bool,
    pub warnings: Vec<String>,
}

impl BootstrapSummary {
    /// The replicate matrix: one row of whale weights per successful
    /// replicate.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.replicates.iter().map(|r| r.theta_w.clone()).collect()
    }

    pub fn max_share_deviation(&self) -> f64 {
        self.replicates
            .iter()
            .map(|r| r.max_share_deviation)
            .fold(0.0, f64::max)
    }
}

/// Run `config.b` replicate fits and summarize them with percentile
/// intervals.
///
/// `full` is the full-data fit; it is required for a warm start and for
/// frozen scaling constants.
pub fn bootstrap(
    observations: &[PreparedObservation],
    est: &EstimationConfig,
    config: &BootstrapConfig,
    full: Option<&FitResult>,
) -> Result<BootstrapSummary> {
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::input("no observations to resample"));
    }
    if full.is_none() && (config.warm_start || config.freeze_scaling) {
        return Err(Error::config(
            "warm start and frozen scaling need the full-data fit",
        ));
    }
    let n_groups = est.n_groups.unwrap_or_else(|| group_count(observations));
    if let Some(f) = full {
        if f.eta_hat.len() != n_groups {
            return Err(Error::config(format!(
                "full-data fit has {} groups but the data has {n_groups}",
                f.eta_hat.len()
            )));
        }
    }
    let strata = Strata::new(observations, n_groups)?;
    let n_boot = config.effective_n_boot(observations.len());
    let mut warnings = Vec::new();
    for g in 0..n_groups {
        if strata.n_units(g) == 0 {
            warnings.push(format!("group {g} has no trajectories and is not resampled"));
        }
    }

    let mut rep_config = EstimationConfig {
        n_groups: Some(n_groups),
        init: if config.warm_start { full.map(|f| f.eta_hat.clone()) } else { None },
        ..est.clone()
    };
    // Replicates already fan out; keep each fit sequential.
    let outer = est.exec;
    if outer.is_parallel() {
        rep_config.exec = ExecMode::Sequential;
    }

    let outcomes = par::map_range(outer, config.b, |b| {
        let idx = strata.sample(n_boot, config.seed, b as u64);
        let deviation = strata.share_deviation(observations, &idx);
        let sample: Vec<PreparedObservation> = idx.iter().map(|&i| observations[i].clone()).collect();
        let result = match (config.freeze_scaling, full) {
            (true, Some(f)) => fit_with_scaling(&sample, &rep_config, f.scaling),
            _ => fit(&sample, &rep_config),
        };
        match result {
            Ok(r) if r.objective_value.is_finite() => Ok(Replicate {
                index: b,
                theta_w: r.weights.theta_w,
                objective_value: r.objective_value,
                converged: r.converged,
                n_obs: sample.len(),
                max_share_deviation: deviation,
            }),
            Ok(r) => Err(ReplicateFailure {
                index: b,
                message: format!("non-finite objective {}", r.objective_value),
            }),
            Err(e) => Err(ReplicateFailure {
                index: b,
                message: e.to_string(),
            }),
        }
    });

    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => replicates.push(r),
            Err(f) => failures.push(f),
        }
    }
    if replicates.is_empty() {
        return Err(Error::Optimizer(format!(
            "all {} bootstrap replicates failed; first error: {}",
            config.b, failures[0].message
        )));
    }
    let unreliable = failures.len() as f64 > UNRELIABLE_FAILURE_SHARE * config.b as f64;
    if unreliable {
        warnings.push(format!(
            "{} of {} replicates failed; intervals are unreliable",
            failures.len(),
            config.b
        ));
    }
    let worst = replicates
        .iter()
        .map(|r| r.max_share_deviation)
        .fold(0.0, f64::max);
    if worst > SHARE_TOLERANCE {
        warnings.push(format!(
            "stratum shares deviate by up to {:.2}% in some replicates",
            100.0 * worst
        ));
    }
    let not_converged = replicates.iter().filter(|r| !r.converged).count();
    if not_converged > 0 {
        warnings.push(format!("{not_converged} replicate fits stopped at the evaluation limit"));
    }

    let alpha = (1.0 - config.ci_level) / 2.0;
    let groups = (0..n_groups)
        .map(|g| {
            let w: Vec<f64> = replicates.iter().map(|r| r.theta_w[g]).collect();
            let i: Vec<f64> = w.iter().map(|x| 1.0 - x).collect();
            let q = |v: &[f64], p| quantile(v, p).expect("non-empty");
            GroupInterval {
                group: g,
                mean_theta_w: mean(&w).expect("non-empty"),
                theta_w_lo: q(&w, alpha),
                theta_w_hi: q(&w, 1.0 - alpha),
                mean_theta_i: mean(&i).expect("non-empty"),
                theta_i_lo: q(&i, alpha),
                theta_i_hi: q(&i, 1.0 - alpha),
            }
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(BootstrapSummary {
        config: config.clone(),
        n_boot_effective: n_boot,
        groups,
        replicates,
        failures,
        unreliable,
        warnings,
    })
}
