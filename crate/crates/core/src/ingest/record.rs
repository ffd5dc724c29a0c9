use std::collections::HashMap;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest SOG value treated as a real report; AIS uses 102.3 as
/// "not available".
pub const MAX_VALID_SOG: f64 = 102.2;

/// One raw position report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AisRecord {
    pub mmsi: String,
    pub cell_id: String,
    pub time_id: i64,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Reported speed over ground, knots; `None` when missing or invalid.
    pub sog: Option<f64>,
    pub cog: Option<f64>,
    pub group: String,
    pub status: u8,
    /// Ice concentration in the unit chosen at ingestion.
    pub ice: Option<f64>,
    /// Baseline speed, knots.
    pub baseline: Option<f64>,
    /// Key matched against the whale grid; the UTC month when unmapped.
    pub time_key: i64,
    pub wind: Option<f64>,
    pub bathymetry: Option<f64>,
    pub dist_coast: Option<f64>,
}

impl AisRecord {
    pub fn trajectory_key(&self) -> (String, String, i64) {
        (self.mmsi.clone(), self.cell_id.clone(), self.time_id)
    }

    pub fn trajectory_id(&self) -> String {
        format!("{}|{}|{}", self.mmsi, self.cell_id, self.time_id)
    }
}

/// Maps canonical field names to the input file's header names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub mmsi: String,
    pub cell_id: String,
    pub time_id: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub sog: String,
    pub cog: String,
    pub group: String,
    pub status: String,
    pub ice: String,
    pub baseline: String,
    /// Optional whale-grid key column; the timestamp's month when unset.
    pub time_key: Option<String>,
    pub wind: String,
    pub bathymetry: String,
    pub dist_coast: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            mmsi: "mmsi".into(),
            cell_id: "cell_id".into(),
            time_id: "time_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            sog: "sog".into(),
            cog: "cog".into(),
            group: "vessel_group".into(),
            status: "status".into(),
            ice: "ice".into(),
            baseline: "mu".into(),
            time_key: None,
            wind: "wind".into(),
            bathymetry: "bathymetry".into(),
            dist_coast: "dist_coast".into(),
        }
    }
}

impl ColumnMap {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Parse a UTC timestamp: integer epoch seconds, RFC 3339, or
/// `YYYY-MM-DD[ T]HH:MM:SS[.fff]`. Sub-second parts are truncated.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(Error::input(format!("unparseable timestamp '{s}'")))
}

/// UTC calendar month (1-12) of an epoch timestamp.
pub fn month_of(timestamp: i64) -> u32 {
    use chrono::Datelike;
    DateTime::from_timestamp(timestamp, 0)
        .map(|d| d.month())
        .unwrap_or(1)
}

fn optional_number(s: Option<&str>) -> Result<Option<f64>> {
    match s.map(str::trim) {
        None | Some("") => Ok(None),
        Some(t) if t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") => Ok(None),
        Some(t) => t
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::input(format!("not a number: '{t}'"))),
    }
}

/// Counts of values normalized away while reading.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadReport {
    pub rows: usize,
    pub invalid_sog: usize,
}

/// Read raw AIS rows from CSV using `columns` to locate fields.
pub fn read_ais_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<(Vec<AisRecord>, ReadReport)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let required = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::input(format!("missing required column '{name}'")))
    };
    let optional = |name: &str| index.get(name).copied();

    let c_mmsi = required(&columns.mmsi)?;
    let c_cell = required(&columns.cell_id)?;
    let c_time_id = required(&columns.time_id)?;
    let c_ts = required(&columns.timestamp)?;
    let c_lat = required(&columns.lat)?;
    let c_lon = required(&columns.lon)?;
    let c_group = required(&columns.group)?;
    let c_status = required(&columns.status)?;
    let c_ice = required(&columns.ice)?;
    let c_base = required(&columns.baseline)?;
    let c_key = match &columns.time_key {
        Some(name) => Some(required(name)?),
        None => None,
    };
    let c_sog = optional(&columns.sog);
    let c_cog = optional(&columns.cog);
    let c_wind = optional(&columns.wind);
    let c_bathy = optional(&columns.bathymetry);
    let c_coast = optional(&columns.dist_coast);

    let mut report = ReadReport::default();
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = |e: Error| Error::input(format!("data row {}: {e}", line + 1));
        let field = |c: usize| rec.get(c).unwrap_or("").trim();
        let opt = |c: Option<usize>| optional_number(c.map(&field)).map_err(ctx);

        let timestamp = parse_timestamp(field(c_ts)).map_err(ctx)?;
        let lat: f64 = field(c_lat)
            .parse()
            .map_err(|_| ctx(Error::input(format!("bad latitude '{}'", field(c_lat)))))?;
        let lon: f64 = field(c_lon)
            .parse()
            .map_err(|_| ctx(Error::input(format!("bad longitude '{}'", field(c_lon)))))?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(ctx(Error::input(format!("coordinates ({lat}, {lon}) out of range"))));
        }
        let time_id: i64 = field(c_time_id)
            .parse()
            .map_err(|_| ctx(Error::input(format!("bad time id '{}'", field(c_time_id)))))?;
        let status: u8 = field(c_status)
            .parse()
            .ok()
            .filter(|s| *s <= 15)
            .ok_or_else(|| ctx(Error::input(format!("bad status '{}'", field(c_status)))))?;
        let mut sog = opt(c_sog)?;
        if let Some(v) = sog {
            if !(v.is_finite() && (0.0..=MAX_VALID_SOG).contains(&v)) {
                report.invalid_sog += 1;
                sog = None;
            }
        }
        let time_key = match c_key {
            Some(c) => field(c)
                .parse()
                .map_err(|_| ctx(Error::input(format!("bad time key '{}'", field(c)))))?,
            None => i64::from(month_of(timestamp)),
        };
        out.push(AisRecord {
            mmsi: field(c_mmsi).to_string(),
            cell_id: field(c_cell).to_string(),
            time_id,
            timestamp,
            lat,
            lon,
            sog,
            cog: opt(c_cog)?,
            group: field(c_group).to_string(),
            status,
            ice: opt(Some(c_ice))?,
            baseline: opt(Some(c_base))?,
            time_key,
            wind: opt(c_wind)?,
            bathymetry: opt(c_bathy)?,
            dist_coast: opt(c_coast)?,
        });
    }
    report.rows = out.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("0").unwrap(), 0);
        assert_eq!(parse_timestamp("2021-08-01T00:00:10Z").unwrap(), 1_627_776_010);
        assert_eq!(parse_timestamp("2021-08-01 00:00:10.987").unwrap(), 1_627_776_010);
        assert_eq!(parse_timestamp("2021-08-01T00:00:10").unwrap(), 1_627_776_010);
        assert!(parse_timestamp("yesterday").is_err());
        assert_eq!(month_of(1_627_776_010), 8);
    }

    const SAMPLE: &str = "\
mmsi,cell_id,time_id,timestamp,lat,lon,sog,vessel_group,status,ice,mu
1,c,5,2021-08-01T00:00:00Z,70.0,-160.0,,Cargo,0,0.5,4.0
1,c,5,2021-08-01T00:06:00Z,70.0,-159.9,-3,Cargo,0,0.5,4.0
1,c,5,2021-08-01T00:12:00Z,70.0,-159.8,102.3,Cargo,0,NA,4.0
";

    #[test]
    fn reads_and_normalizes_sog() {
        let (recs, report) = read_ais_csv(SAMPLE.as_bytes(), &ColumnMap::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(report.invalid_sog, 2);
        assert!(recs.iter().all(|r| r.sog.is_none()));
        assert_eq!(recs[2].ice, None);
        assert_eq!(recs[0].time_key, 8);
        assert_eq!(recs[0].trajectory_id(), "1|c|5");
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = SAMPLE.replace("70.0,-159.9", "95.0,-159.9");
        assert!(read_ais_csv(bad.as_bytes(), &ColumnMap::default()).is_err());
        let missing = SAMPLE.replace("mu\n", "baseline\n");
        assert!(read_ais_csv(missing.as_bytes(), &ColumnMap::default()).is_err());
    }

    #[test]
    fn column_map_from_toml() {
        let map = ColumnMap::from_toml("mmsi = \"MMSI\"\ntimestamp = \"BaseDateTime\"\ntime_key = \"month\"").unwrap();
        assert_eq!(map.mmsi, "MMSI");
        assert_eq!(map.lat, "lat");
        assert_eq!(map.time_key.as_deref(), Some("month"));
        assert!(ColumnMap::from_toml("nonsense = \"x\"").is_err());
    }
}
