//! Small raw AIS-style sample with a matching whale grid, for demos and
//! end-to-end tests of the preparation step.
//!
//! Vessels follow straight tracks through a box in the Bering and Chukchi
//! seas. Each day a vessel spends in a 1-degree cell becomes one
//! trajectory. Speeds slow down in ice; some reports lack SOG, a few are
//! near-duplicates or stationary jitter, and a few lack ice or baseline
//! values so that every exclusion path is exercised.

use std::io::Write;

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::covariates::WhaleNode;
use crate::ingest::record::month_of;

const GROUPS: [(&str, f64); 5] = [
    ("Cargo", 11.0),
    ("Fishing", 6.0),
    ("Passenger", 13.0),
    ("Tanker", 10.0),
    ("Tug Tow", 7.0),
];
const LAT_RANGE: (f64, f64) = (64.0, 72.0);
const LON_RANGE: (f64, f64) = (-170.0, -155.0);
/// Whale grid spacing, degrees.
const GRID_STEP: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub seed: u64,
    pub vessels: usize,
    pub pings_per_vessel: usize,
    /// First report, epoch seconds.
    pub start: i64,
    /// Mean seconds between reports.
    pub ping_seconds: f64,
    /// Share of reports without SOG.
    pub missing_sog: f64,
    /// Share of reports without ice or baseline.
    pub missing_covariate: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            seed: 1,
            vessels: 20,
            pings_per_vessel: 50,
            // 2021-08-01T00:00:00Z
            start: 1_627_776_000,
            ping_seconds: 90.0,
            missing_sog: 0.6,
            missing_covariate: 0.02,
        }
    }
}

/// One report in the default raw column layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawReport {
    pub mmsi: String,
    pub cell_id: String,
    pub time_id: i64,
    pub timestamp: String,
    pub lat: f64,
    pub lon: f64,
    pub sog: Option<f64>,
    pub cog: f64,
    pub vessel_group: String,
    pub status: u8,
    pub ice: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub reports: Vec<RawReport>,
    pub whale_grid: Vec<WhaleNode>,
}

/// Ice concentration in tenths: heavier to the north and late in the
/// season.
fn ice_field(lat: f64, lon: f64, month: u32) -> f64 {
    let season = match month {
        7..=9 => 0.0,
        10 | 6 => 2.0,
        _ => 4.0,
    };
    let north = (lat - 66.0) * 1.2 + 0.3 * ((lon + 160.0) * 0.7).sin();
    (north + season).clamp(0.0, 10.0)
}

/// Whale intensity: a feeding hotspot plus a weak background.
fn whale_field(lat: f64, lon: f64, month: u32) -> f64 {
    let d2 = (lat - 68.5).powi(2) + ((lon + 166.0) * 0.5).powi(2);
    let seasonal = if (7..=10).contains(&month) { 1.0 } else { 0.3 };
    0.05 + seasonal * 1.5 * (-d2 / 2.0).exp()
}

fn cell_of(lat: f64, lon: f64) -> String {
    format!("{}_{}", lat.floor() as i64, lon.floor() as i64)
}

fn rfc3339(ts: i64) -> Result<String> {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .ok_or_else(|| Error::config(format!("timestamp {ts} out of range")))
}

pub fn generate_raw(cfg: &SampleConfig) -> Result<RawSample> {
    if cfg.vessels == 0 || cfg.pings_per_vessel < 2 {
        return Err(Error::config("sample needs at least one vessel with two reports"));
    }
    if !(cfg.ping_seconds > 0.0) {
        return Err(Error::config("ping_seconds must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports = Vec::with_capacity(cfg.vessels * cfg.pings_per_vessel);
    let mut months = std::collections::BTreeSet::new();
    for v in 0..cfg.vessels {
        let (group, cruise) = GROUPS[v % GROUPS.len()];
        let mmsi = format!("{}", 338_000_000 + v as u64 * 137);
        let status: u8 = if group == "Fishing" { 7 } else { 0 };
        let mut lat = rng.random_range(LAT_RANGE.0 + 0.5..LAT_RANGE.1 - 0.5);
        let mut lon = rng.random_range(LON_RANGE.0 + 0.5..LON_RANGE.1 - 0.5);
        let heading: f64 = (rng.random_range(0.0..360.0f64) * 10.0).round() / 10.0;
        let mut ts = cfg.start + rng.random_range(0..86_400 * 20);
        for k in 0..cfg.pings_per_vessel {
            let mo = month_of(ts);
            months.insert(mo);
            let ice = ice_field(lat, lon, mo);
            // Slow down in ice towards the safe speed.
            let target = (cruise - 0.6 * ice).max(1.0);
            let roll: f64 = rng.random();
            let speed = if roll < 0.08 {
                0.0
            } else {
                (target + rng.random_range(-1.5..1.5)).max(0.3)
            };
            let sog = (rng.random::<f64>() >= cfg.missing_sog).then(|| (speed * 10.0).round() / 10.0);
            let drop_cov = rng.random::<f64>() < cfg.missing_covariate;
            reports.push(RawReport {
                mmsi: mmsi.clone(),
                cell_id: cell_of(lat, lon),
                time_id: (ts - cfg.start).div_euclid(86_400),
                timestamp: rfc3339(ts)?,
                lat: (lat * 1e5).round() / 1e5,
                lon: (lon * 1e5).round() / 1e5,
                sog,
                cog: heading,
                vessel_group: group.to_string(),
                status,
                ice: (!drop_cov || k % 2 == 0).then_some((ice * 10.0).round() / 10.0),
                mu: (!drop_cov || k % 2 == 1).then_some(cruise),
            });
            // Occasional duplicate report with the same timestamp.
            let step = if rng.random::<f64>() < 0.02 {
                0
            } else {
                (cfg.ping_seconds * rng.random_range(0.5..1.5)).round() as i64
            };
            let hours = step as f64 / 3600.0;
            let nm = speed * hours;
            let dlat = nm / 60.0 * heading.to_radians().cos();
            let dlon = nm / 60.0 * heading.to_radians().sin() / lat.to_radians().cos();
            lat = (lat + dlat).clamp(LAT_RANGE.0, LAT_RANGE.1);
            lon = (lon + dlon).clamp(LON_RANGE.0, LON_RANGE.1);
            ts += step;
        }
    }
    let mut whale_grid = Vec::new();
    let n_lat = ((LAT_RANGE.1 - LAT_RANGE.0) / GRID_STEP).round() as usize;
    let n_lon = ((LON_RANGE.1 - LON_RANGE.0) / GRID_STEP).round() as usize;
    for &mo in &months {
        for i in 0..=n_lat {
            for j in 0..=n_lon {
                let lat = LAT_RANGE.0 + i as f64 * GRID_STEP;
                let lon = LON_RANGE.0 + j as f64 * GRID_STEP;
                whale_grid.push(WhaleNode {
                    lat,
                    lon,
                    time_key: mo as i64,
                    intensity: (whale_field(lat, lon, mo) * 1e4).round() / 1e4,
                });
            }
        }
    }
    Ok(RawSample { reports, whale_grid })
}

pub fn write_reports<W: Write>(writer: W, reports: &[RawReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_whale_grid<W: Write>(writer: W, nodes: &[WhaleNode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for n in nodes {
        w.serialize(n)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{prepare, read_ais_csv, ColumnMap, PrepareOptions, WhaleGrid};
    use crate::par::ExecMode;

    #[test]
    fn sample_runs_through_preparation() {
        let s = generate_raw(&SampleConfig::default()).unwrap();
        assert_eq!(s.reports.len(), 1000);
        let mut buf = Vec::new();
        write_reports(&mut buf, &s.reports).unwrap();
        let (records, _) = read_ais_csv(buf.as_slice(), &ColumnMap::default()).unwrap();
        let mut gbuf = Vec::new();
        write_whale_grid(&mut gbuf, &s.whale_grid).unwrap();
        let grid = WhaleGrid::from_csv(gbuf.as_slice()).unwrap();
        let p = prepare(records, &grid, &PrepareOptions::default(), ExecMode::Sequential).unwrap();
        let r = &p.report;
        assert!(r.rows > 500, "{r:?}");
        assert!(r.speed_sources.sog > 0 && r.speed_sources.derived > 0 && r.speed_sources.stationary > 0);
        assert!(r.dropped_nonpositive_dt > 0);
        assert!(r.excluded.total() > 0);
        assert_eq!(r.excluded.missing_whale, 0);
    }

    #[test]
    fn deterministic() {
        let a = generate_raw(&SampleConfig::default()).unwrap();
        let b = generate_raw(&SampleConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
