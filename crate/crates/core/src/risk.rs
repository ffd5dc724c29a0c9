//! Latent speed-risk objective.
//!
//! For a candidate speed `v` and observation `n` in group `g`:
//!
//! ```text
//! R(v) = dt * [ 0.5 (v - mu)^2 / c_delta
//!             + theta_w[g] * D (v + v^m) / c_w
//!             + theta_i[g] * (I v^2 + (v - v_safe)_+^2) / c_i ]
//! ```
//!
//! The model-implied optimal speed is the argmin of `R` over a uniform
//! speed grid (ties go to the lowest speed) and the suboptimality gap is
//! `R(v_obs) - min_grid R`, with `v_obs` evaluated at its exact value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::PreparedObservation;
use crate::par::{self, ExecMode};
use crate::stats;

pub const DEFAULT_GRID_STEP: f64 = 0.5;
/// Quantile used for the empirical scaling constants.
pub const SCALING_QUANTILE: f64 = 0.95;
/// Lower floor applied to every scaling constant.
pub const SCALING_FLOOR: f64 = 1e-8;
pub const DEFAULT_EXPONENT: u32 = 2;

/// Ice-dependent safe speed (knots) for concentration in tenths.
pub fn v_safe(ice_tenths: f64) -> Result<f64> {
    if !(0.0..=10.0).contains(&ice_tenths) {
        return Err(Error::input(format!(
            "ice concentration {ice_tenths} outside [0, 10] tenths"
        )));
    }
    Ok(if ice_tenths <= 5.0 {
        19.0 - 14.0 / 5.0 * ice_tenths
    } else {
        5.0 - (ice_tenths - 5.0) / 5.0
    })
}

/// `v^m` by repeated multiplication.
#[inline]
pub fn int_pow(v: f64, m: u32) -> f64 {
    let mut p = 1.0;
    for _ in 0..m {
        p *= v;
    }
    p
}

#[inline]
fn positive_part(x: f64) -> f64 {
    x.max(0.0)
}

/// Uniform candidate-speed grid `{0, step, ..., v_max}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct SpeedGrid {
    v_max: f64,
    step: f64,
    values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    v_max: f64,
    step: f64,
}

impl TryFrom<GridSpec> for SpeedGrid {
    type Error = Error;
    fn try_from(g: GridSpec) -> Result<Self> {
        SpeedGrid::new(g.v_max, g.step)
    }
}

impl From<SpeedGrid> for GridSpec {
    fn from(g: SpeedGrid) -> Self {
        GridSpec {
            v_max: g.v_max,
            step: g.step,
        }
    }
}

impl SpeedGrid {
    pub fn new(v_max: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && v_max.is_finite() && v_max > 0.0) {
            return Err(Error::config(format!(
                "speed grid needs positive finite v_max and step (got {v_max}, {step})"
            )));
        }
        let intervals = (v_max / step).round();
        if (intervals * step - v_max).abs() > 1e-9 * v_max.max(1.0) {
            return Err(Error::config(format!(
                "grid step {step} does not divide v_max {v_max}"
            )));
        }
        let n = intervals as usize;
        let mut values: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        values[n] = v_max;
        Ok(SpeedGrid {
            v_max,
            step,
            values,
        })
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for SpeedGrid {
    fn default() -> Self {
        SpeedGrid::new(crate::observation::V_MAX_KNOTS, DEFAULT_GRID_STEP)
            .expect("default grid is valid")
    }
}

/// Per-group whale/ice trade-off weights plus the acoustic exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskWeights {
    pub theta_w: Vec<f64>,
    pub theta_i: Vec<f64>,
    pub m: u32,
}

impl RiskWeights {
    pub fn new(theta_w: Vec<f64>, theta_i: Vec<f64>, m: u32) -> Result<Self> {
        if theta_w.len() != theta_i.len() {
            return Err(Error::config("weight vectors differ in length"));
        }
        if m == 0 {
            return Err(Error::config("acoustic exponent must be a positive integer"));
        }
        for (g, (&w, &i)) in theta_w.iter().zip(&theta_i).enumerate() {
            if !(w >= 0.0 && i >= 0.0 && (w + i - 1.0).abs() <= 1e-12) {
                return Err(Error::config(format!(
                    "weights for group {g} leave the simplex: ({w}, {i})"
                )));
            }
        }
        Ok(RiskWeights {
            theta_w,
            theta_i,
            m,
        })
    }

    /// Weights with `theta_i = 1 - theta_w`.
    pub fn from_whale_weights(theta_w: Vec<f64>, m: u32) -> Result<Self> {
        let theta_i = theta_w.iter().map(|w| 1.0 - w).collect();
        RiskWeights::new(theta_w, theta_i, m)
    }

    pub fn n_groups(&self) -> usize {
        self.theta_w.len()
    }
}

/// Empirical normalizers of the three objective components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    pub c_delta: f64,
    pub c_w: f64,
    pub c_i: f64,
}

impl ScalingConstants {
    pub fn new(c_delta: f64, c_w: f64, c_i: f64) -> Result<Self> {
        for (name, c) in [("c_delta", c_delta), ("c_w", c_w), ("c_i", c_i)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {c}")));
            }
        }
        Ok(ScalingConstants { c_delta, c_w, c_i })
    }
}

/// Observed-speed values of the three objective components for one row.
pub fn observed_terms(obs: &PreparedObservation, m: u32) -> (f64, f64, f64) {
    let v = obs.v_obs;
    let dev = v - obs.mu;
    let whale = obs.whale * (v + int_pow(v, m));
    let over = positive_part(v - obs.v_safe);
    let ice = obs.ice_tenths * v * v + over * over;
    (dev * dev, whale, ice)
}

/// 95th-percentile scaling constants, each floored at [`SCALING_FLOOR`].
pub fn compute_scaling(observations: &[PreparedObservation], m: u32) -> Result<ScalingConstants> {
    compute_scaling_with(observations, m, ExecMode::default())
}

pub fn compute_scaling_with(
    observations: &[PreparedObservation],
    m: u32,
    mode: ExecMode,
) -> Result<ScalingConstants> {
    if observations.is_empty() {
        return Err(Error::input("cannot compute scaling constants from no observations"));
    }
    let terms = par::map(mode, observations, |o| observed_terms(o, m));
    let pick = |f: fn(&(f64, f64, f64)) -> f64| {
        let column: Vec<f64> = terms.iter().map(f).collect();
        stats::quantile(&column, SCALING_QUANTILE)
            .filter(|q| q.is_finite())
            .map(|q| q.max(SCALING_FLOOR))
            .ok_or_else(|| Error::input("non-finite observed risk term"))
    };
    ScalingConstants::new(pick(|t| t.0)?, pick(|t| t.1)?, pick(|t| t.2)?)
}

/// Risk of one observation with its group's weights, ready for repeated
/// evaluation over candidate speeds.
#[derive(Clone, Copy, Debug)]
pub struct ObservationRisk {
    dt: f64,
    mu: f64,
    whale: f64,
    ice: f64,
    v_safe: f64,
    theta_w: f64,
    theta_i: f64,
    m: u32,
    scaling: ScalingConstants,
}

impl ObservationRisk {
    #[inline]
    pub fn new(obs: &PreparedObservation, w: &RiskWeights, s: &ScalingConstants) -> Self {
        let g = obs.group_index;
        Self::with_weights(obs, w.theta_w[g], w.theta_i[g], w.m, s)
    }

    /// Like [`new`](Self::new) with the group's weights given directly.
    #[inline]
    pub fn with_weights(
        obs: &PreparedObservation,
        theta_w: f64,
        theta_i: f64,
        m: u32,
        s: &ScalingConstants,
    ) -> Self {
        ObservationRisk {
            dt: obs.dt,
            mu: obs.mu,
            whale: obs.whale,
            ice: obs.ice_tenths,
            v_safe: obs.v_safe,
            theta_w,
            theta_i,
            m,
            scaling: *s,
        }
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        let dev = v - self.mu;
        let baseline = 0.5 * dev * dev / self.scaling.c_delta;
        let whale = self.theta_w * (self.whale * (v + int_pow(v, self.m)) / self.scaling.c_w);
        let over = positive_part(v - self.v_safe);
        let ice = self.theta_i * ((self.ice * v * v + over * over) / self.scaling.c_i);
        self.dt * (baseline + whale + ice)
    }

    /// Grid argmin (lowest speed on ties) and the minimum risk.
    #[inline]
    pub fn grid_min(&self, grid: &SpeedGrid) -> (f64, f64) {
        let values = grid.values();
        let mut best_v = values[0];
        let mut best_r = self.eval(best_v);
        for &v in &values[1..] {
            let r = self.eval(v);
            if r < best_r {
                best_r = r;
                best_v = v;
            }
        }
        (best_v, best_r)
    }

    /// Same result as [`grid_min`](Self::grid_min) in `O(log n)`
    /// evaluations. Valid because the risk is convex in `v` for `v >= 0`:
    /// a binary search on the sign of the discrete slope locates the
    /// minimum, and a short exhaustive scan around it absorbs rounding
    /// noise and applies the low tie-break.
    pub fn grid_min_convex(&self, grid: &SpeedGrid) -> (f64, f64) {
        let values = grid.values();
        let (mut lo, mut hi) = (0, values.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.eval(values[mid + 1]) >= self.eval(values[mid]) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let first = lo.saturating_sub(2);
        let last = (lo + 2).min(values.len() - 1);
        let mut best_v = values[first];
        let mut best_r = self.eval(best_v);
        for &v in &values[first + 1..=last] {
            let r = self.eval(v);
            if r < best_r {
                best_r = r;
                best_v = v;
            }
        }
        (best_v, best_r)
    }
}

/// Risk of candidate speed `v` for `obs`.
pub fn risk_eval(v: f64, obs: &PreparedObservation, w: &RiskWeights, s: &ScalingConstants) -> f64 {
    ObservationRisk::new(obs, w, s).eval(v)
}

/// Model-implied optimal speed on `grid`.
pub fn optimal_speed(
    obs: &PreparedObservation,
    w: &RiskWeights,
    s: &ScalingConstants,
    grid: &SpeedGrid,
) -> f64 {
    ObservationRisk::new(obs, w, s).grid_min(grid).0
}

/// `R(v_obs) - min_grid R`. May be slightly negative when `v_obs` lies off
/// the grid.
pub fn subopt_gap(
    obs: &PreparedObservation,
    w: &RiskWeights,
    s: &ScalingConstants,
    grid: &SpeedGrid,
) -> f64 {
    let risk = ObservationRisk::new(obs, w, s);
    risk.eval(obs.v_obs) - risk.grid_min(grid).1
}

/// Optimal speeds for a batch of observations, in input order.
pub fn optimal_speeds(
    observations: &[PreparedObservation],
    w: &RiskWeights,
    s: &ScalingConstants,
    grid: &SpeedGrid,
    mode: ExecMode,
) -> Vec<f64> {
    par::map(mode, observations, |o| optimal_speed(o, w, s, grid))
}
