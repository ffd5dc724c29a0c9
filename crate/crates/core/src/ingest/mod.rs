//! Raw position reports to prepared observations: trajectory grouping,
//! segment speeds, covariate joins and the binary cache.

pub mod cache;
pub mod covariates;
pub mod diagnostics;
pub mod record;
pub mod segment;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use covariates::{assign_covariates, ExclusionCounts, IceUnit, WhaleGrid, WhaleNode};
pub use diagnostics::{diagnostics, DiagnosticsReport, Percentiles};
pub use record::{parse_timestamp, read_ais_csv, AisRecord, ColumnMap, ReadReport};
pub use segment::{build_segments, haversine_km, Segment, SegmentParams, SpeedSource};

use crate::dataset::PreparedRow;
use crate::error::Result;
use crate::par::{self, ExecMode};

/// Exclusion share above which preparation emits a warning.
pub const EXCLUSION_WARN_FRACTION: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub segment: SegmentParams,
    pub ice_unit: IceUnit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedSourceCounts {
    pub sog: usize,
    pub derived: usize,
    pub stationary: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub records: usize,
    pub trajectories: usize,
    /// Trajectories with a single record, which yield no segment.
    pub single_record_trajectories: usize,
    pub segments: usize,
    pub dropped_nonpositive_dt: usize,
    pub speed_sources: SpeedSourceCounts,
    pub excluded: ExclusionCounts,
    pub rows: usize,
    pub warnings: Vec<String>,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub rows: Vec<PreparedRow>,
    pub report: PrepareReport,
}

struct TrajectoryOutput {
    rows: Vec<PreparedRow>,
    segments: Vec<Segment>,
    dropped: usize,
    excluded: ExclusionCounts,
}

/// Run the full preparation on unsorted records.
///
/// Records are grouped by (mmsi, cell_id, time_id), stably sorted by time
/// within each trajectory, segmented and joined; trajectories are processed
/// independently and the output is sorted by (trajectory_id, timestamp), so
/// the result does not depend on `mode`.
pub fn prepare(records: Vec<AisRecord>, grid: &WhaleGrid, opts: &PrepareOptions, mode: ExecMode) -> Result<Prepared> {
    let n_records = records.len();
    let mut groups: BTreeMap<(String, String, i64), Vec<AisRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.trajectory_key()).or_default().push(r);
    }
    let mut trajectories: Vec<Vec<AisRecord>> = groups.into_values().collect();
    for t in &mut trajectories {
        t.sort_by_key(|r| r.timestamp);
    }
    let single = trajectories.iter().filter(|t| t.len() == 1).count();

    let outputs = par::map(mode, &trajectories, |recs| -> Result<TrajectoryOutput> {
        let segs = build_segments(recs, &opts.segment)?;
        let (rows, excluded) = assign_covariates(recs, &segs.segments, grid, opts.ice_unit)?;
        Ok(TrajectoryOutput {
            rows,
            segments: segs.segments,
            dropped: segs.dropped_nonpositive_dt,
            excluded,
        })
    });

    let mut report = PrepareReport {
        records: n_records,
        trajectories: trajectories.len(),
        single_record_trajectories: single,
        ..PrepareReport::default()
    };
    let mut rows = Vec::new();
    let mut all_segments = Vec::new();
    for out in outputs {
        let out = out?;
        report.dropped_nonpositive_dt += out.dropped;
        report.excluded.add(&out.excluded);
        for s in &out.segments {
            match s.source {
                SpeedSource::Sog => report.speed_sources.sog += 1,
                SpeedSource::Derived => report.speed_sources.derived += 1,
                SpeedSource::Stationary => report.speed_sources.stationary += 1,
            }
        }
        all_segments.extend(out.segments);
        rows.extend(out.rows);
    }
    rows.sort_by(|a, b| {
        a.trajectory_id
            .cmp(&b.trajectory_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    report.segments = all_segments.len();
    report.rows = rows.len();
    report.diagnostics = diagnostics(&all_segments);
    if report.segments > 0 {
        let frac = report.excluded.total() as f64 / report.segments as f64;
        if frac > EXCLUSION_WARN_FRACTION {
            report.warnings.push(format!(
                "{:.1}% of segments excluded for missing covariates",
                100.0 * frac
            ));
        }
    }
    if report.dropped_nonpositive_dt > 0 {
        report.warnings.push(format!(
            "{} consecutive record pairs with non-positive time step dropped",
            report.dropped_nonpositive_dt
        ));
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(Prepared { rows, report })
}
