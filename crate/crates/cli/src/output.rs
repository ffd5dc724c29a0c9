use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FIT_FORMAT: &str = "speedrisk-fit";
pub const FIT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// Write `bytes` to a temporary file next to `path`, then rename it into
/// place so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    // Temporary files are created owner-only; outputs should not be.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        FileDigest {
            path: path.display().to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        }
    }

    pub fn read(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok((Self::of(path, &bytes), bytes))
    }
}

/// Provenance record written beside every primary output. Everything
/// except `created_unix` and `duration_seconds` is a function of the inputs.
#[derive(Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub report: serde_json::Value,
    pub created_unix: u64,
    pub duration_seconds: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, parameters: serde_json::Value) -> Self {
        Manifest {
            manifest_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            parameters,
            inputs: Vec::new(),
            outputs: Vec::new(),
            report: serde_json::Value::Null,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            duration_seconds: 0.0,
            started: Some(Instant::now()),
        }
    }

    /// Write an output file atomically and record its digest.
    pub fn emit(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(FileDigest::of(path, bytes));
        Ok(())
    }

    /// Write the manifest as `<primary>.manifest.json`.
    pub fn finish(mut self, primary: &Path) -> Result<PathBuf> {
        if let Some(t) = self.started {
            self.duration_seconds = t.elapsed().as_secs_f64();
        }
        let path = manifest_path(primary);
        write_atomic(&path, &to_json(&self)?)?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    primary.with_file_name(name)
}

/// `boot.csv` -> `boot_<suffix>.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn derived_paths() {
        assert_eq!(manifest_path(Path::new("out/fit.json")), Path::new("out/fit.json.manifest.json"));
        assert_eq!(sibling(Path::new("out/boot.csv"), "summary"), Path::new("out/boot_summary.csv"));
        assert_eq!(sibling(Path::new("boot"), "summary"), Path::new("boot_summary"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
