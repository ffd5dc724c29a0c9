//! Columnar binary cache of prepared rows.
//!
//! Layout (little-endian): the 8-byte magic, a `u32` format version, a `u64`
//! row count, then one block per column in [`COLUMNS`] order. Each block
//! starts with the column name (`u16` length + UTF-8 bytes) and a `u8` kind
//! tag. Numeric blocks hold one fixed-width value per row; string blocks hold
//! a `u32` dictionary size, the dictionary entries (`u32` length + bytes) and
//! one `u32` code per row.

use std::collections::HashMap;

use crate::dataset::PreparedRow;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SPDRISK\0";
pub const VERSION: u32 = 1;

const KIND_STR: u8 = 0;
const KIND_I64: u8 = 1;
const KIND_U32: u8 = 2;
const KIND_U8: u8 = 3;
const KIND_F64: u8 = 4;

pub const COLUMNS: [(&str, u8); 16] = [
    ("trajectory_id", KIND_STR),
    ("mmsi", KIND_STR),
    ("cell_id", KIND_STR),
    ("time_id", KIND_I64),
    ("month", KIND_U32),
    ("timestamp", KIND_I64),
    ("lat", KIND_F64),
    ("lon", KIND_F64),
    ("vessel_group", KIND_STR),
    ("status", KIND_U8),
    ("v_obs", KIND_F64),
    ("dt", KIND_F64),
    ("mu", KIND_F64),
    ("whale", KIND_F64),
    ("ice_tenths", KIND_F64),
    ("v_safe", KIND_F64),
];

pub fn has_magic(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

fn put_str_column<'a>(out: &mut Vec<u8>, values: impl Iterator<Item = &'a str>) {
    let mut dict: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, u32> = HashMap::new();
    let codes: Vec<u32> = values
        .map(|v| {
            *index.entry(v).or_insert_with(|| {
                dict.push(v);
                (dict.len() - 1) as u32
            })
        })
        .collect();
    out.extend_from_slice(&(dict.len() as u32).to_le_bytes());
    for s in dict {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    for c in codes {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

pub fn encode(rows: &[PreparedRow]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + rows.len() * 100);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for (name, kind) in COLUMNS {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(kind);
        let f64s = |out: &mut Vec<u8>, f: fn(&PreparedRow) -> f64| {
            for r in rows {
                out.extend_from_slice(&f(r).to_le_bytes());
            }
        };
        match name {
            "trajectory_id" => put_str_column(&mut out, rows.iter().map(|r| r.trajectory_id.as_str())),
            "mmsi" => put_str_column(&mut out, rows.iter().map(|r| r.mmsi.as_str())),
            "cell_id" => put_str_column(&mut out, rows.iter().map(|r| r.cell_id.as_str())),
            "vessel_group" => put_str_column(&mut out, rows.iter().map(|r| r.vessel_group.as_str())),
            "time_id" => rows.iter().for_each(|r| out.extend_from_slice(&r.time_id.to_le_bytes())),
            "timestamp" => rows.iter().for_each(|r| out.extend_from_slice(&r.timestamp.to_le_bytes())),
            "month" => rows.iter().for_each(|r| out.extend_from_slice(&r.month.to_le_bytes())),
            "status" => rows.iter().for_each(|r| out.push(r.status)),
            "lat" => f64s(&mut out, |r| r.lat),
            "lon" => f64s(&mut out, |r| r.lon),
            "v_obs" => f64s(&mut out, |r| r.v_obs),
            "dt" => f64s(&mut out, |r| r.dt),
            "mu" => f64s(&mut out, |r| r.mu),
            "whale" => f64s(&mut out, |r| r.whale),
            "ice_tenths" => f64s(&mut out, |r| r.ice_tenths),
            "v_safe" => f64s(&mut out, |r| r.v_safe),
            _ => unreachable!("column list and encoder out of sync"),
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::input("cache file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::input("cache holds invalid UTF-8"))
    }

    fn str_column(&mut self, n: usize) -> Result<Vec<String>> {
        let dict_len = self.u32()? as usize;
        let mut dict = Vec::with_capacity(dict_len.min(n));
        for _ in 0..dict_len {
            let len = self.u32()? as usize;
            dict.push(self.string(len)?);
        }
        (0..n)
            .map(|_| {
                let code = self.u32()? as usize;
                dict.get(code)
                    .cloned()
                    .ok_or_else(|| Error::input("cache string code out of range"))
            })
            .collect()
    }

    fn fixed<T, const N: usize>(&mut self, n: usize, conv: fn([u8; N]) -> T) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(N).ok_or_else(|| Error::input("cache row count overflows"))?)?;
        Ok(raw.chunks_exact(N).map(|c| conv(c.try_into().expect("exact chunk"))).collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<PreparedRow>> {
    if !has_magic(bytes) {
        return Err(Error::input("not a prepared-data cache (bad magic)"));
    }
    let mut c = Cursor { bytes, pos: MAGIC.len() };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::input(format!("unsupported cache version {version} (expected {VERSION})")));
    }
    let n = usize::try_from(u64::from_le_bytes(c.array()?))
        .map_err(|_| Error::input("cache row count overflows"))?;

    let mut strs: HashMap<&str, Vec<String>> = HashMap::new();
    let mut f64s: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut i64s: HashMap<&str, Vec<i64>> = HashMap::new();
    let mut months = Vec::new();
    let mut status = Vec::new();
    for (name, kind) in COLUMNS {
        let len = u16::from_le_bytes(c.array()?) as usize;
        let found = c.string(len)?;
        let found_kind = c.array::<1>()?[0];
        if found != name || found_kind != kind {
            return Err(Error::input(format!(
                "cache column mismatch: expected '{name}', found '{found}'"
            )));
        }
        match kind {
            KIND_STR => {
                strs.insert(name, c.str_column(n)?);
            }
            KIND_I64 => {
                i64s.insert(name, c.fixed(n, i64::from_le_bytes)?);
            }
            KIND_U32 => months = c.fixed(n, u32::from_le_bytes)?,
            KIND_U8 => status = c.fixed(n, |b: [u8; 1]| b[0])?,
            _ => {
                f64s.insert(name, c.fixed(n, f64::from_le_bytes)?);
            }
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::input("trailing bytes after cache payload"));
    }

    let mut take_s = |k| strs.remove(k).expect("decoded above").into_iter();
    let (mut traj, mut mmsi, mut cell, mut group) =
        (take_s("trajectory_id"), take_s("mmsi"), take_s("cell_id"), take_s("vessel_group"));
    let f = |k: &str, i: usize| f64s[k][i];
    Ok((0..n)
        .map(|i| PreparedRow {
            trajectory_id: traj.next().expect("n entries"),
            mmsi: mmsi.next().expect("n entries"),
            cell_id: cell.next().expect("n entries"),
            time_id: i64s["time_id"][i],
            month: months[i],
            timestamp: i64s["timestamp"][i],
            lat: f("lat", i),
            lon: f("lon", i),
            vessel_group: group.next().expect("n entries"),
            status: status[i],
            v_obs: f("v_obs", i),
            dt: f("dt", i),
            mu: f("mu", i),
            whale: f("whale", i),
            ice_tenths: f("ice_tenths", i),
            v_safe: f("v_safe", i),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures::row;

    #[test]
    fn roundtrip_bit_exact() {
        let mut rows = vec![
            row("a", "Cargo", 0, 1.5, 1.25),
            row("a", "Cargo", 0, 0.0, 0.0),
            row("b", "Tug Tow", 12, 39.999999, 0.1 + 0.2),
        ];
        rows[2].timestamp = -5;
        rows[2].month = 12;
        let bytes = encode(&rows);
        assert!(has_magic(&bytes));
        assert_eq!(decode(&bytes).unwrap(), rows);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
        assert!(decode(&encode(&[])).unwrap().is_empty());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&[row("a", "Cargo", 0, 1.5, 1.25)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(decode(&v2).unwrap_err().to_string().contains("version"));
        assert!(decode(b"trajectory_id,mmsi").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
