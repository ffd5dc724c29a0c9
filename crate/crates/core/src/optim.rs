//! Bound-constrained derivative-free minimization with quadratic models.
//!
//! Each iteration samples a two-point stencil per coordinate around the
//! incumbent (`x ± Δ e_i`, or two points on the interior side when `x` sits
//! on a bound), fits a separable quadratic model through the three values on
//! every axis and minimizes it exactly over the box intersected with the
//! infinity-norm trust region `‖s‖∞ ≤ Δ`. The best of the model step and
//! the stencil points replaces the incumbent on strict improvement; the
//! radius grows after a well-predicted full-length step and halves when
//! nothing improves.
//!
//! Because the stencil itself is a compass pattern, the method keeps the
//! convergence behaviour of coordinate search on nonsmooth objectives while
//! taking model steps on smooth stretches.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionOptions {
    pub initial_radius: f64,
    /// Stop once the radius falls below this.
    pub min_radius: f64,
    pub max_radius: f64,
    pub max_evals: usize,
    /// Stop when an accepted step lowers the objective by less than
    /// `rel_tol * |f|`.
    pub rel_tol: f64,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        TrustRegionOptions {
            initial_radius: 1.0,
            min_radius: 1e-6,
            max_radius: 5.0,
            max_evals: 2000,
            rel_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

struct Counted<F> {
    f: F,
    evals: usize,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    fn call(&mut self, x: &[f64]) -> Result<f64> {
        self.evals += 1;
        let v = (self.f)(x)?;
        if v.is_nan() {
            return Err(Error::Optimizer(format!("objective returned NaN at {x:?}")));
        }
        Ok(v)
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.budget
    }
}

/// Offsets of the two stencil points on one axis, or `None` when the box
/// leaves no room to move.
fn stencil_offsets(x: f64, lo: f64, hi: f64, delta: f64) -> Option<(f64, f64)> {
    let up = (hi - x).min(delta);
    let down = (x - lo).min(delta);
    if up > 0.0 && down > 0.0 {
        Some((up, -down))
    } else if up > 0.0 {
        let far = (hi - x).min(2.0 * delta);
        (far > up).then_some((up, far))
    } else if down > 0.0 {
        let far = (x - lo).min(2.0 * delta);
        (far > down).then_some((-down, -far))
    } else {
        None
    }
}

/// Minimize `g s + h s² / 2` over `s ∈ [a, b]` (with `a ≤ 0 ≤ b`).
fn minimize_1d(g: f64, h: f64, a: f64, b: f64) -> f64 {
    let model = |s: f64| g * s + 0.5 * h * s * s;
    if h > 0.0 {
        return (-g / h).clamp(a, b);
    }
    let (ma, mb) = (model(a), model(b));
    if ma.min(mb) >= 0.0 {
        0.0
    } else if ma < mb {
        a
    } else {
        b
    }
}

/// Minimize `f` over the box `[lower, upper]` starting from `x0`.
///
/// The returned point is never worse than the (projected) start. Errors from
/// `f` abort the search.
pub fn minimize<F>(
    f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &TrustRegionOptions,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::config("bounds and start differ in dimension"));
    }
    if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::config("lower bound exceeds upper bound"));
    }
    if opts.max_evals < n + 2 {
        return Err(Error::config(format!(
            "evaluation budget {} below n + 2 = {}",
            opts.max_evals,
            n + 2
        )));
    }
    let mut obj = Counted {
        f,
        evals: 0,
        budget: opts.max_evals,
    };
    let mut x: Vec<f64> = x0
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect();
    let mut fx = obj.call(&x)?;
    let mut delta = opts.initial_radius.min(opts.max_radius);
    let mut iterations = 0;

    let finish = |x: Vec<f64>, f: f64, evals: usize, iterations: usize, converged: bool| Minimum {
        x,
        f,
        n_evals: evals,
        iterations,
        converged,
    };

    if n == 0 {
        return Ok(finish(x, fx, obj.evals, 0, true));
    }

    loop {
        if delta < opts.min_radius {
            return Ok(finish(x, fx, obj.evals, iterations, true));
        }
        if obj.exhausted() {
            return Ok(finish(x, fx, obj.evals, iterations, false));
        }
        iterations += 1;

        let mut grad = vec![0.0; n];
        let mut curv = vec![0.0; n];
        let mut movable = vec![false; n];
        let mut best_stencil: Option<(f64, Vec<f64>)> = None;
        let mut probe = x.clone();
        for i in 0..n {
            let Some((a, b)) = stencil_offsets(x[i], lower[i], upper[i], delta) else {
                continue;
            };
            let mut values = [0.0; 2];
            for (slot, off) in values.iter_mut().zip([a, b]) {
                if obj.exhausted() {
                    return Ok(finish(x, fx, obj.evals, iterations, false));
                }
                probe[i] = (x[i] + off).clamp(lower[i], upper[i]);
                *slot = obj.call(&probe)?;
                if best_stencil.as_ref().is_none_or(|(bf, _)| *slot < *bf) {
                    best_stencil = Some((*slot, probe.clone()));
                }
            }
            probe[i] = x[i];
            let da = (values[0] - fx) / a;
            let db = (values[1] - fx) / b;
            let h = 2.0 * (da - db) / (a - b);
            curv[i] = h;
            grad[i] = da - 0.5 * h * a;
            movable[i] = true;
        }

        let mut step = vec![0.0; n];
        let mut predicted = 0.0;
        for i in (0..n).filter(|&i| movable[i]) {
            let a = (lower[i] - x[i]).max(-delta);
            let b = (upper[i] - x[i]).min(delta);
            let s = minimize_1d(grad[i], curv[i], a, b);
            step[i] = s;
            predicted -= grad[i] * s + 0.5 * curv[i] * s * s;
        }

        let mut candidate: Option<(f64, Vec<f64>, bool)> =
            best_stencil.map(|(f, p)| (f, p, false));
        let step_len = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if predicted > 0.0 && step_len > 0.0 && !obj.exhausted() {
            let trial: Vec<f64> = x
                .iter()
                .zip(&step)
                .zip(lower.iter().zip(upper))
                .map(|((xi, si), (l, u))| (xi + si).clamp(*l, *u))
                .collect();
            let ft = obj.call(&trial)?;
            if candidate.as_ref().is_none_or(|(cf, _, _)| ft <= *cf) {
                candidate = Some((ft, trial, true));
            }
        }

        match candidate {
            Some((f_new, x_new, from_model)) if f_new < fx => {
                let decrease = fx - f_new;
                let scale = fx.abs().max(f64::MIN_POSITIVE);
                if from_model {
                    let ratio = decrease / predicted;
                    if ratio >= 0.75 && step_len >= 0.99 * delta {
                        delta = (2.0 * delta).min(opts.max_radius);
                    } else if ratio < 0.25 {
                        delta *= 0.5;
                    }
                }
                x = x_new;
                fx = f_new;
                if decrease <= opts.rel_tol * scale {
                    return Ok(finish(x, fx, obj.evals, iterations, true));
                }
            }
            _ => delta *= 0.5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> TrustRegionOptions {
        TrustRegionOptions {
            rel_tol: 0.0,
            min_radius: 1e-9,
            ..TrustRegionOptions::default()
        }
    }

    #[test]
    fn separable_quadratic_interior() {
        let f = |x: &[f64]| Ok((x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2));
        let r = minimize(f, &[0.0, 0.0], &[-10.0, -10.0], &[10.0, 10.0], &opts()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.5).abs() < 1e-6, "{r:?}");
        assert!((r.x[1] + 0.5).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| Ok((x[0] - 20.0).powi(2) + x[1].powi(2));
        let r = minimize(f, &[0.0, 3.0], &[-10.0, -10.0], &[10.0, 10.0], &opts()).unwrap();
        assert_eq!(r.x[0], 10.0);
        assert!(r.x[1].abs() < 1e-6);
    }

    #[test]
    fn coupled_rosenbrock() {
        let f = |x: &[f64]| Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let o = TrustRegionOptions {
            max_evals: 20_000,
            ..opts()
        };
        // The separable model crawls along the curved valley; it still has
        // to make steady progress from f = 24.2.
        let r = minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &o).unwrap();
        assert!(r.f < 1e-4, "{r:?}");
    }

    #[test]
    fn nonsmooth_abs() {
        let f = |x: &[f64]| Ok((x[0] - 0.3).abs() + 2.0 * (x[1] + 1.7).abs());
        let r = minimize(f, &[4.0, 4.0], &[-10.0, -10.0], &[10.0, 10.0], &opts()).unwrap();
        assert!((r.x[0] - 0.3).abs() < 1e-6 && (r.x[1] + 1.7).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn budget_exhaustion_returns_best() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| (v - 3.0).powi(4)).sum::<f64>());
        let o = TrustRegionOptions {
            max_evals: 12,
            ..opts()
        };
        let start = [0.0, 0.0, 0.0];
        let f0 = 3.0 * 81.0;
        let r = minimize(f, &start, &[-10.0; 3], &[10.0; 3], &o).unwrap();
        assert!(!r.converged);
        assert!(r.n_evals <= 12);
        assert!(r.f <= f0);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| Ok((x[0] * 7.0).sin() + 0.1 * x[0] * x[0]);
        for s in [-3.0, -0.5, 0.0, 1.1, 9.9] {
            let f0 = (s * 7.0f64).sin() + 0.1 * s * s;
            let r = minimize(f, &[s], &[-10.0], &[10.0], &opts()).unwrap();
            assert!(r.f <= f0);
        }
    }

    #[test]
    fn rejects_small_budget_and_bad_bounds() {
        let f = |_: &[f64]| Ok(0.0);
        let tiny = TrustRegionOptions {
            max_evals: 2,
            ..opts()
        };
        assert!(minimize(f, &[0.0, 0.0], &[-1.0; 2], &[1.0; 2], &tiny).is_err());
        assert!(minimize(f, &[0.0], &[1.0], &[-1.0], &opts()).is_err());
    }

    #[test]
    fn stencil_hugs_bounds() {
        assert_eq!(stencil_offsets(10.0, -10.0, 10.0, 1.0), Some((-1.0, -2.0)));
        assert_eq!(stencil_offsets(-10.0, -10.0, 10.0, 1.0), Some((1.0, 2.0)));
        assert_eq!(stencil_offsets(9.5, -10.0, 10.0, 1.0), Some((0.5, -1.0)));
        assert_eq!(stencil_offsets(0.0, 0.0, 0.0, 1.0), None);
    }
}
