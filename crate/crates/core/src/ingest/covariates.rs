use std::collections::BTreeMap;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::PreparedRow;
use crate::error::{Error, Result};
use crate::ingest::record::{month_of, AisRecord};
use crate::ingest::segment::{haversine_term, Segment};
use crate::risk::v_safe;

/// Unit of the raw ice column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IceUnit {
    #[default]
    Tenths,
    /// Concentration in `[0, 1]`; multiplied by 10 on ingestion.
    Fraction,
}

impl IceUnit {
    pub fn to_tenths(self, value: f64) -> f64 {
        match self {
            IceUnit::Tenths => value,
            IceUnit::Fraction => value * 10.0,
        }
    }
}

impl FromStr for IceUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tenths" => Ok(IceUnit::Tenths),
            "fraction" => Ok(IceUnit::Fraction),
            other => Err(Error::config(format!(
                "unknown ice unit '{other}' (expected tenths or fraction)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhaleNode {
    pub lat: f64,
    pub lon: f64,
    pub time_key: i64,
    pub intensity: f64,
}

/// Gridded whale intensity surface with a per-time-key node index.
#[derive(Clone, Debug, PartialEq)]
pub struct WhaleGrid {
    nodes: Vec<WhaleNode>,
    by_key: BTreeMap<i64, Vec<usize>>,
}

impl WhaleGrid {
    pub fn new(nodes: Vec<WhaleNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::config("whale grid has no nodes"));
        }
        let mut by_key: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if !(n.intensity.is_finite() && n.intensity >= 0.0) {
                return Err(Error::config(format!("whale grid node {i}: intensity {} must be finite and >= 0", n.intensity)));
            }
            if !(-90.0..=90.0).contains(&n.lat) || !(-180.0..=180.0).contains(&n.lon) {
                return Err(Error::config(format!("whale grid node {i}: coordinates out of range")));
            }
            by_key.entry(n.time_key).or_default().push(i);
        }
        Ok(WhaleGrid { nodes, by_key })
    }

    /// Read `lat,lon,time_key,intensity` rows.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let nodes = rdr
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect::<Result<Vec<WhaleNode>>>()?;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[WhaleNode] {
        &self.nodes
    }

    /// Index of the nearest node sharing `time_key`; ties go to the lower
    /// index.
    pub fn nearest(&self, lat: f64, lon: f64, time_key: i64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for &i in self.by_key.get(&time_key)? {
            let n = &self.nodes[i];
            let a = haversine_term(lat, lon, n.lat, n.lon);
            if best.is_none_or(|(b, _)| a < b) {
                best = Some((a, i));
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn intensity_at(&self, lat: f64, lon: f64, time_key: i64) -> Option<f64> {
        self.nearest(lat, lon, time_key).map(|i| self.nodes[i].intensity)
    }
}

/// Segments dropped for a missing or non-finite covariate, by the first
/// missing one in the order baseline, whale, ice.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub missing_mu: usize,
    pub missing_whale: usize,
    pub missing_ice: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.missing_mu + self.missing_whale + self.missing_ice
    }

    pub fn add(&mut self, other: &ExclusionCounts) {
        self.missing_mu += other.missing_mu;
        self.missing_whale += other.missing_whale;
        self.missing_ice += other.missing_ice;
    }
}

/// Attach baseline speed, whale intensity and ice to the segments of one
/// trajectory. Covariates are read at each segment's ending record.
pub fn assign_covariates(
    records: &[AisRecord],
    segments: &[Segment],
    grid: &WhaleGrid,
    ice_unit: IceUnit,
) -> Result<(Vec<PreparedRow>, ExclusionCounts)> {
    let mut rows = Vec::with_capacity(segments.len());
    let mut excluded = ExclusionCounts::default();
    for seg in segments {
        let rec = records
            .get(seg.end)
            .ok_or_else(|| Error::input(format!("segment ends at missing record {}", seg.end)))?;
        let Some(mu) = rec.baseline.filter(|m| m.is_finite()) else {
            excluded.missing_mu += 1;
            continue;
        };
        let Some(whale) = grid.intensity_at(rec.lat, rec.lon, rec.time_key) else {
            excluded.missing_whale += 1;
            continue;
        };
        let Some(ice) = rec.ice.filter(|i| i.is_finite()) else {
            excluded.missing_ice += 1;
            continue;
        };
        if mu < 0.0 {
            return Err(Error::input(format!(
                "trajectory {}: negative baseline speed {mu}",
                rec.trajectory_id()
            )));
        }
        let ice_tenths = ice_unit.to_tenths(ice);
        if !(0.0..=10.0).contains(&ice_tenths) {
            return Err(Error::input(format!(
                "trajectory {}: ice {ice} is outside [0, 10] tenths after conversion (check the ice unit)",
                rec.trajectory_id()
            )));
        }
        let v_obs = seg.speed_knots;
        rows.push(PreparedRow {
            trajectory_id: rec.trajectory_id(),
            mmsi: rec.mmsi.clone(),
            cell_id: rec.cell_id.clone(),
            time_id: rec.time_id,
            month: month_of(rec.timestamp),
            timestamp: rec.timestamp,
            lat: rec.lat,
            lon: rec.lon,
            vessel_group: rec.group.clone(),
            status: rec.status,
            v_obs,
            dt: seg.dt_hours,
            mu: if v_obs == 0.0 { 0.0 } else { mu },
            whale,
            ice_tenths,
            v_safe: v_safe(ice_tenths)?,
        });
    }
    Ok((rows, excluded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::segment::SpeedSource;

    fn node(lat: f64, lon: f64, key: i64, intensity: f64) -> WhaleNode {
        WhaleNode {
            lat,
            lon,
            time_key: key,
            intensity,
        }
    }

    fn rec(ts: i64, mu: Option<f64>, ice: Option<f64>) -> AisRecord {
        AisRecord {
            mmsi: "9".into(),
            cell_id: "c".into(),
            time_id: 3,
            timestamp: ts,
            lat: 70.0,
            lon: -160.0,
            sog: None,
            cog: None,
            group: "Tanker".into(),
            status: 0,
            ice,
            baseline: mu,
            time_key: 8,
            wind: None,
            bathymetry: None,
            dist_coast: None,
        }
    }

    fn seg(end: usize, speed: f64) -> Segment {
        Segment {
            start: end - 1,
            end,
            distance_km: 0.0,
            dt_hours: 0.5,
            derived_knots: speed,
            speed_knots: speed,
            source: SpeedSource::Derived,
        }
    }

    #[test]
    fn nearest_node_and_ties() {
        let grid = WhaleGrid::new(vec![
            node(70.0, -161.0, 8, 1.0),
            node(70.0, -159.0, 8, 2.0),
            node(70.0, -160.0, 9, 5.0),
        ])
        .unwrap();
        // Equidistant from nodes 0 and 1; node 2 has another key.
        assert_eq!(grid.nearest(70.0, -160.0, 8), Some(0));
        assert_eq!(grid.intensity_at(70.0, -160.0, 9), Some(5.0));
        assert_eq!(grid.intensity_at(70.0, -159.0, 8), Some(2.0));
        assert_eq!(grid.nearest(70.0, -160.0, 7), None);
    }

    #[test]
    fn tie_break_exhaustive() {
        // Two nodes mirrored about the query's meridian, in both orders.
        for dlon in [0.25, 0.5, 1.0, 3.0] {
            for lat in [-60.0, 0.0, 45.0, 72.5] {
                let a = node(lat, 10.0 - dlon, 1, 1.0);
                let b = node(lat, 10.0 + dlon, 1, 2.0);
                let g1 = WhaleGrid::new(vec![a.clone(), b.clone()]).unwrap();
                let g2 = WhaleGrid::new(vec![b, a]).unwrap();
                assert_eq!(g1.nearest(lat, 10.0, 1), Some(0));
                assert_eq!(g2.nearest(lat, 10.0, 1), Some(0));
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(WhaleGrid::new(vec![]), Err(Error::Config(_))));
        assert!(WhaleGrid::new(vec![node(0.0, 0.0, 1, -1.0)]).is_err());
        let g = WhaleGrid::from_csv("lat,lon,time_key,intensity\n70,-160,8,0.3\n".as_bytes()).unwrap();
        assert_eq!(g.nodes().len(), 1);
    }

    #[test]
    fn zero_speed_rule_and_exclusions() {
        let grid = WhaleGrid::new(vec![node(70.0, -160.0, 8, 0.7)]).unwrap();
        let recs = vec![
            rec(0, Some(4.2), Some(0.3)),
            rec(1800, Some(4.2), Some(0.3)),
            rec(3600, None, Some(0.3)),
            rec(5400, Some(4.2), None),
            rec(7200, Some(f64::NAN), Some(0.3)),
            rec(9000, Some(6.0), Some(0.3)),
        ];
        let segs: Vec<Segment> = vec![seg(1, 0.0), seg(2, 3.0), seg(3, 3.0), seg(4, 3.0), seg(5, 3.0)];
        let (rows, ex) = assign_covariates(&recs, &segs, &grid, IceUnit::Fraction).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mu, 0.0);
        assert_eq!(rows[0].whale, 0.7);
        assert!((rows[0].ice_tenths - 3.0).abs() < 1e-12);
        assert_eq!(rows[0].v_safe, v_safe(rows[0].ice_tenths).unwrap());
        assert_eq!(rows[1].mu, 6.0);
        assert_eq!(ex.missing_mu, 2);
        assert_eq!(ex.missing_ice, 1);
        assert_eq!(ex.total(), 3);
        // Stationary rows keep their exposure.
        assert!(rows[0].whale * rows[0].dt > 0.0 && rows[0].ice_tenths * rows[0].dt > 0.0);
    }

    #[test]
    fn ice_unit_mismatch_is_reported() {
        let grid = WhaleGrid::new(vec![node(70.0, -160.0, 8, 0.7)]).unwrap();
        let recs = vec![rec(0, Some(1.0), Some(4.0)), rec(60, Some(1.0), Some(4.0))];
        assert!(assign_covariates(&recs, &[seg(1, 1.0)], &grid, IceUnit::Fraction).is_err());
        assert!(assign_covariates(&recs, &[seg(1, 1.0)], &grid, IceUnit::Tenths).is_ok());
        assert_eq!("fraction".parse::<IceUnit>().unwrap(), IceUnit::Fraction);
        assert!("percent".parse::<IceUnit>().is_err());
    }
}
