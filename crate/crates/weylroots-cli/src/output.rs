//! Result files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use weylroots::{Error, Result};

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Resource(format!("{}: {e}", path.display()))
}

/// Collects emitted files so the manifest can list them with hashes.
pub struct OutDir {
    pub dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let probe = dir.join(".write-test");
        fs::write(&probe, b"").map_err(|e| io_err(dir, format!("not writable: {e}")))?;
        let _ = fs::remove_file(&probe);
        Ok(OutDir { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    /// CSV with a fixed header; cells are already formatted.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Resource(format!("{name}: {e}"));
        w.write_record(header).map_err(err)?;
        for r in rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Resource(format!("{name}: {e}")))?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Resource(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn finish(self, manifest: Manifest) -> Result<()> {
        let files = self.files.iter().map(|(n, h)| FileEntry { name: n.clone(), sha256: h.clone() }).collect();
        let m = Manifest { files, ..manifest };
        let path = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&m).map_err(|e| Error::Resource(e.to_string()))?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| io_err(&path, e))
    }
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: &'static str,
    pub config_path: String,
    pub out_dir: String,
    pub seed: Option<u64>,
    pub workers: usize,
    pub version: &'static str,
    pub commit: &'static str,
    /// Every parameter after defaults; feeding this file back as `--config`
    /// replays the run.
    pub resolved: serde_json::Value,
    pub files: Vec<FileEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip form, in exponent notation when very small or large.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
