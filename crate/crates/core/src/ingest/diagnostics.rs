use serde::{Deserialize, Serialize};

use crate::ingest::segment::Segment;
use crate::stats::{quantile_sorted, sorted_copy};

/// Displacements below this many metres count as GPS jitter.
pub const JITTER_METRES: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
    pub p999: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let s = sorted_copy(values);
        let q = |p| quantile_sorted(&s, p);
        Some(Percentiles {
            p50: q(0.5)?,
            p75: q(0.75)?,
            p90: q(0.9)?,
            p99: q(0.99)?,
            p999: q(0.999)?,
        })
    }
}

/// Distribution summaries used to choose the stationary thresholds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_segments: usize,
    pub displacement_m: Option<Percentiles>,
    pub elapsed_hours: Option<Percentiles>,
    /// Over segments with a positive final speed only.
    pub positive_speed_knots: Option<Percentiles>,
    pub frac_displacement_below_50m: Option<f64>,
}

pub fn diagnostics(segments: &[Segment]) -> DiagnosticsReport {
    let metres: Vec<f64> = segments.iter().map(|s| s.distance_km * 1000.0).collect();
    diagnostics_from(
        &metres,
        &segments.iter().map(|s| s.dt_hours).collect::<Vec<_>>(),
        &segments.iter().map(|s| s.speed_knots).collect::<Vec<_>>(),
    )
}

/// Same report from raw columns (displacement in metres).
pub fn diagnostics_from(displacement_m: &[f64], elapsed_hours: &[f64], speeds: &[f64]) -> DiagnosticsReport {
    let positive: Vec<f64> = speeds.iter().copied().filter(|v| *v > 0.0).collect();
    let below = displacement_m.iter().filter(|d| **d < JITTER_METRES).count();
    DiagnosticsReport {
        n_segments: displacement_m.len(),
        displacement_m: Percentiles::of(displacement_m),
        elapsed_hours: Percentiles::of(elapsed_hours),
        positive_speed_knots: Percentiles::of(&positive),
        frac_displacement_below_50m: (!displacement_m.is_empty())
            .then(|| below as f64 / displacement_m.len() as f64),
    }
}
