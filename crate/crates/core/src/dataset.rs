//! Prepared-observation table: CSV schema, grouping and conversion to the
//! lean analysis representation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::cache;
use crate::observation::PreparedObservation;

/// One row of the prepared CSV. Column order is the serialized order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedRow {
    pub trajectory_id: String,
    pub mmsi: String,
    pub cell_id: String,
    pub time_id: i64,
    pub month: u32,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub vessel_group: String,
    pub status: u8,
    pub v_obs: f64,
    pub dt: f64,
    pub mu: f64,
    pub whale: f64,
    pub ice_tenths: f64,
    pub v_safe: f64,
}

/// Which categorical column defines the estimation groups.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    VesselGroup,
    Status,
}

impl FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vessel_group" | "vessel-group" | "group" => Ok(GroupBy::VesselGroup),
            "status" => Ok(GroupBy::Status),
            other => Err(Error::config(format!(
                "unknown grouping '{other}' (expected vessel_group or status)"
            ))),
        }
    }
}

impl GroupBy {
    pub fn label(self, row: &PreparedRow) -> String {
        match self {
            GroupBy::VesselGroup => row.vessel_group.clone(),
            GroupBy::Status => row.status.to_string(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::VesselGroup => "vessel_group",
            GroupBy::Status => "status",
        }
    }
}

/// Observations ready for estimation plus the labels behind the dense
/// group and trajectory indices.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisData {
    pub observations: Vec<PreparedObservation>,
    pub group_labels: Vec<String>,
    pub trajectory_labels: Vec<String>,
}

impl AnalysisData {
    pub fn n_groups(&self) -> usize {
        self.group_labels.len()
    }
}

/// Distinct group labels in canonical order (numeric for status codes,
/// lexicographic otherwise).
pub fn group_labels(rows: &[PreparedRow], group_by: GroupBy) -> Vec<String> {
    match group_by {
        GroupBy::Status => {
            let mut codes: Vec<u8> = rows.iter().map(|r| r.status).collect();
            codes.sort_unstable();
            codes.dedup();
            codes.into_iter().map(|c| c.to_string()).collect()
        }
        GroupBy::VesselGroup => {
            let mut labels: Vec<String> = rows.iter().map(|r| r.vessel_group.clone()).collect();
            labels.sort();
            labels.dedup();
            labels
        }
    }
}

/// Convert rows using labels discovered in the data.
pub fn to_analysis(rows: &[PreparedRow], group_by: GroupBy) -> Result<AnalysisData> {
    let labels = group_labels(rows, group_by);
    to_analysis_with_labels(rows, group_by, &labels)
}

/// Convert rows using a fixed label order, e.g. the one stored in a fit.
/// Rows whose label is not in `labels` are an input error.
pub fn to_analysis_with_labels(
    rows: &[PreparedRow],
    group_by: GroupBy,
    labels: &[String],
) -> Result<AnalysisData> {
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut trajectories: Vec<String> = rows.iter().map(|r| r.trajectory_id.clone()).collect();
    trajectories.sort();
    trajectories.dedup();
    let traj_index: BTreeMap<&str, usize> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let observations = rows
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let label = group_by.label(r);
            let g = *index.get(label.as_str()).ok_or_else(|| {
                Error::input(format!("row {n}: group '{label}' not among the fitted groups"))
            })?;
            let o = PreparedObservation {
                v_obs: r.v_obs,
                dt: r.dt,
                mu: r.mu,
                whale: r.whale,
                ice_tenths: r.ice_tenths,
                v_safe: r.v_safe,
                group_index: g,
                trajectory_id: traj_index[r.trajectory_id.as_str()],
            };
            o.validate(crate::observation::V_MAX_KNOTS)
                .map_err(|e| Error::input(format!("row {n}: {e}")))?;
            Ok(o)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisData {
        observations,
        group_labels: labels.to_vec(),
        trajectory_labels: trajectories,
    })
}

pub fn write_prepared_csv<W: Write>(writer: W, rows: &[PreparedRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prepared_csv<R: Read>(reader: R) -> Result<Vec<PreparedRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Load prepared rows from either the CSV or the binary cache, detected by
/// the cache's magic header.
pub fn load_prepared(path: &Path) -> Result<Vec<PreparedRow>> {
    let bytes = std::fs::read(path)?;
    if cache::has_magic(&bytes) {
        cache::decode(&bytes)
    } else {
        read_prepared_csv(bytes.as_slice())
    }
}
