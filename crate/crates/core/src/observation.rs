use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::v_safe;

/// Upper bound on plausible observed speed, knots.
pub const V_MAX_KNOTS: f64 = 40.0;

/// One analysis-ready segment endpoint.
///
/// Built through [`PreparedObservation::new`], which derives `v_safe` from the
/// ice concentration and enforces the zero-speed rule (`v_obs == 0` implies
/// `mu == 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedObservation {
    /// Observed segment speed, knots.
    pub v_obs: f64,
    /// Segment duration, hours.
    pub dt: f64,
    /// Baseline speed, knots.
    pub mu: f64,
    /// Whale encounter intensity.
    pub whale: f64,
    /// Sea-ice concentration in tenths, `[0, 10]`.
    pub ice_tenths: f64,
    /// Safe-speed benchmark for `ice_tenths`, knots.
    pub v_safe: f64,
    pub group_index: usize,
    pub trajectory_id: usize,
}

impl PreparedObservation {
    pub fn new(
        v_obs: f64,
        dt: f64,
        mu: f64,
        whale: f64,
        ice_tenths: f64,
        group_index: usize,
        trajectory_id: usize,
    ) -> Result<Self> {
        let obs = PreparedObservation {
            v_obs,
            dt,
            mu: if v_obs == 0.0 { 0.0 } else { mu },
            whale,
            ice_tenths,
            v_safe: v_safe(ice_tenths)?,
            group_index,
            trajectory_id,
        };
        obs.validate(V_MAX_KNOTS)?;
        Ok(obs)
    }

    /// Check every field invariant against the speed cap `v_max`.
    pub fn validate(&self, v_max: f64) -> Result<()> {
        let bad = |what: &str| Err(Error::input(format!("observation {what}: {self:?}")));
        if !(self.v_obs.is_finite() && self.v_obs >= 0.0 && self.v_obs <= v_max) {
            return bad("speed outside [0, v_max]");
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("non-positive duration");
        }
        if !self.mu.is_finite() {
            return bad("non-finite baseline");
        }
        if !(self.whale.is_finite() && self.whale >= 0.0) {
            return bad("negative or non-finite whale intensity");
        }
        if !(0.0..=10.0).contains(&self.ice_tenths) {
            return bad("ice outside [0, 10] tenths");
        }
        if self.v_safe != v_safe(self.ice_tenths)? {
            return bad("stale safe speed");
        }
        if self.v_obs == 0.0 && self.mu != 0.0 {
            return bad("stationary row with nonzero baseline");
        }
        Ok(())
    }

    /// Whale time-exposure `D * dt`.
    pub fn whale_exposure(&self) -> f64 {
        self.whale * self.dt
    }

    /// Ice time-exposure `I * dt`.
    pub fn ice_exposure(&self) -> f64 {
        self.ice_tenths * self.dt
    }
}

/// Number of groups implied by the largest group index.
pub fn group_count(observations: &[PreparedObservation]) -> usize {
    observations
        .iter()
        .map(|o| o.group_index + 1)
        .max()
        .unwrap_or(0)
}

/// Observations per group, indexed by group.
pub fn group_counts(observations: &[PreparedObservation], n_groups: usize) -> Vec<usize> {
    let mut counts = vec![0; n_groups];
    for o in observations {
        counts[o.group_index] += 1;
    }
    counts
}
