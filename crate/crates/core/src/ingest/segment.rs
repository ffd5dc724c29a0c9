use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::record::AisRecord;
use crate::observation::V_MAX_KNOTS;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const KM_PER_NAUTICAL_MILE: f64 = 1.852;

/// Great-circle distance in kilometres between two points in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> Result<f64> {
    for (lat, lon) in [(lat1, lon1), (lat2, lon2)] {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::input(format!("coordinates ({lat}, {lon}) out of range")));
        }
    }
    Ok(2.0 * EARTH_RADIUS_KM * haversine_term(lat1, lon1, lat2, lon2).sqrt().min(1.0).asin())
}

/// The haversine `a` term; monotone in distance, so usable for ranking.
pub(crate) fn haversine_term(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = (lat2 - lat1).to_radians();
    let dl = (lon2 - lon1).to_radians();
    (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2)
}

/// Thresholds for the stationary rule and the speed cap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentParams {
    /// Hours; shorter intervals count as stationary.
    pub dt_min: f64,
    /// Kilometres; smaller displacements count as stationary.
    pub d_min: f64,
    /// Knots.
    pub v_max: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            dt_min: 0.01,
            d_min: 0.05,
            v_max: V_MAX_KNOTS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedSource {
    Sog,
    Derived,
    Stationary,
}

/// The movement between two consecutive records of one trajectory. The
/// segment's covariates come from the record at `end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub distance_km: f64,
    pub dt_hours: f64,
    /// Uncapped distance over time, knots.
    pub derived_knots: f64,
    /// Final speed after the SOG, stationary and cap rules.
    pub speed_knots: f64,
    pub source: SpeedSource,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segments {
    pub segments: Vec<Segment>,
    /// Consecutive pairs skipped for a non-positive time step.
    pub dropped_nonpositive_dt: usize,
}

/// Turn one trajectory (records sharing a key, sorted by time) into
/// segments.
///
/// A valid reported SOG wins; otherwise a segment that is too short in
/// time or in distance is stationary, and the rest use the derived speed.
/// Speeds are capped at `v_max`.
pub fn build_segments(records: &[AisRecord], params: &SegmentParams) -> Result<Segments> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| {
            r.mmsi != first.mmsi || r.cell_id != first.cell_id || r.time_id != first.time_id
        }) {
            return Err(Error::input("records span more than one trajectory"));
        }
    }
    if let Some(k) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::input(format!(
            "trajectory {} is not sorted by time at record {}",
            records[0].trajectory_id(),
            k + 1
        )));
    }
    let mut out = Segments::default();
    for k in 1..records.len() {
        let (prev, cur) = (&records[k - 1], &records[k]);
        let dt_hours = (cur.timestamp - prev.timestamp) as f64 / 3600.0;
        if dt_hours <= 0.0 {
            out.dropped_nonpositive_dt += 1;
            continue;
        }
        let distance_km = haversine_km(prev.lat, prev.lon, cur.lat, cur.lon)?;
        let derived_knots = distance_km / dt_hours / KM_PER_NAUTICAL_MILE;
        let (speed, source) = if let Some(sog) = cur.sog {
            (sog, SpeedSource::Sog)
        } else if dt_hours < params.dt_min || distance_km < params.d_min {
            (0.0, SpeedSource::Stationary)
        } else {
            (derived_knots, SpeedSource::Derived)
        };
        out.segments.push(Segment {
            start: k - 1,
            end: k,
            distance_km,
            dt_hours,
            derived_knots,
            speed_knots: speed.min(params.v_max),
            source,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ts: i64, lat: f64, lon: f64, sog: Option<f64>) -> AisRecord {
        AisRecord {
            mmsi: "1".into(),
            cell_id: "c".into(),
            time_id: 1,
            timestamp: ts,
            lat,
            lon,
            sog,
            cog: None,
            group: "Cargo".into(),
            status: 0,
            ice: Some(0.0),
            baseline: Some(5.0),
            time_key: 8,
            wind: None,
            bathymetry: None,
            dist_coast: None,
        }
    }

    #[test]
    fn haversine_reference_values() {
        // One degree of latitude on a 6371 km sphere.
        let d = haversine_km(0.0, 0.0, 1.0, 0.0).unwrap();
        assert!((d - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
        assert_eq!(haversine_km(70.0, -160.0, 70.0, -160.0).unwrap(), 0.0);
        let antipode = haversine_km(0.0, 0.0, 0.0, 180.0).unwrap();
        assert!((antipode - 6371.0 * std::f64::consts::PI).abs() < 1e-6);
        assert!(haversine_km(91.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn stationary_rule() {
        // 30 s apart, a few metres: stationary.
        let recs = [rec(0, 70.0, -160.0, None), rec(30, 70.00001, -160.0, None)];
        let s = build_segments(&recs, &SegmentParams::default()).unwrap();
        assert_eq!(s.segments[0].source, SpeedSource::Stationary);
        assert_eq!(s.segments[0].speed_knots, 0.0);
    }

    #[test]
    fn thresholds_apply_independently() {
        // 0.1 h and one nautical mile: exactly 10 knots.
        let one_nm_deg = (1.852 / 6371.0f64).to_degrees();
        let recs = [rec(0, 0.0, 0.0, None), rec(360, one_nm_deg, 0.0, None)];
        let s = build_segments(&recs, &SegmentParams::default()).unwrap();
        assert!((s.segments[0].speed_knots - 10.0).abs() < 1e-9);
        // 18 s (0.005 h) with a large move.
        let recs = [rec(0, 70.0, -160.0, None), rec(18, 70.01, -160.0, None)];
        assert_eq!(build_segments(&recs, &SegmentParams::default()).unwrap().segments[0].speed_knots, 0.0);
        // 20 m over an hour.
        let d = (0.02 / 6371.0f64).to_degrees();
        let recs = [rec(0, 70.0, -160.0, None), rec(3600, 70.0 + d, -160.0, None)];
        let s = build_segments(&recs, &SegmentParams::default()).unwrap();
        assert_eq!(s.segments[0].speed_knots, 0.0);
        assert_eq!(s.segments[0].source, SpeedSource::Stationary);
    }

    #[test]
    fn derived_speed_and_cap() {
        // 0.1 degree of latitude in 6 minutes.
        let recs = [rec(0, 70.0, -160.0, None), rec(360, 70.1, -160.0, None)];
        let s = build_segments(&recs, &SegmentParams::default()).unwrap();
        let d = 6371.0 * 0.1f64.to_radians();
        let expected = d / 0.1 / 1.852;
        assert!((s.segments[0].derived_knots - expected).abs() < 1e-9);
        assert_eq!(s.segments[0].speed_knots, 40.0);
        assert_eq!(s.segments[0].source, SpeedSource::Derived);
    }

    #[test]
    fn sog_takes_precedence() {
        let recs = [rec(0, 70.0, -160.0, None), rec(30, 70.0, -160.0, Some(7.5))];
        let s = build_segments(&recs, &SegmentParams::default()).unwrap();
        assert_eq!(s.segments[0].speed_knots, 7.5);
        assert_eq!(s.segments[0].source, SpeedSource::Sog);
    }

    #[test]
    fn duplicate_timestamps_dropped_and_order_checked() {
        let recs = [
            rec(0, 70.0, -160.0, None),
            rec(0, 70.0, -160.0, None),
            rec(600, 70.01, -160.0, None),
        ];
        let s = build_segments(&recs, &SegmentParams::default()).unwrap();
        assert_eq!(s.dropped_nonpositive_dt, 1);
        assert_eq!(s.segments.len(), 1);
        assert_eq!((s.segments[0].start, s.segments[0].end), (1, 2));

        let unsorted = [rec(600, 70.0, -160.0, None), rec(0, 70.0, -160.0, None)];
        assert!(build_segments(&unsorted, &SegmentParams::default()).is_err());
        let mut mixed = recs.to_vec();
        mixed[2].mmsi = "2".into();
        assert!(build_segments(&mixed, &SegmentParams::default()).is_err());
    }

    proptest! {
        #[test]
        fn speeds_within_bounds(
            steps in proptest::collection::vec((1i64..7200, -0.05f64..0.05, -0.05f64..0.05, proptest::option::of(0.0f64..102.2)), 1..20)
        ) {
            let mut recs = vec![rec(0, 70.0, -160.0, None)];
            let mut t = 0;
            for (dt, dlat, dlon, sog) in steps {
                t += dt;
                let last = recs.last().unwrap();
                recs.push(rec(t, last.lat + dlat, last.lon + dlon, sog));
            }
            let s = build_segments(&recs, &SegmentParams::default()).unwrap();
            prop_assert_eq!(s.segments.len(), recs.len() - 1);
            for seg in &s.segments {
                prop_assert!(seg.speed_knots >= 0.0 && seg.speed_knots <= 40.0);
                prop_assert!(seg.dt_hours > 0.0 && seg.distance_km >= 0.0);
            }
        }

        #[test]
        fn haversine_symmetric(a in -89.0f64..89.0, b in -179.0f64..179.0, c in -89.0f64..89.0, d in -179.0f64..179.0) {
            let x = haversine_km(a, b, c, d).unwrap();
            let y = haversine_km(c, d, a, b).unwrap();
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((0.0..=std::f64::consts::PI * 6371.0 + 1e-9).contains(&x));
        }
    }
}
