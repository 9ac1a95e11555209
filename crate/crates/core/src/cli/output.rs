//! Run directories: manifest first, then data files with their hashes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, SCHEMA_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub toolkit_version: String,
    pub engine: String,
    /// SHA-256 of the config file exactly as read.
    pub config_sha256: String,
    pub config_text: String,
    /// The validated config with defaults filled in.
    pub resolved_config: serde_json::Value,
    /// Seeds actually used, after any command-line override.
    pub seeds: Vec<u64>,
    pub seed_override: Option<u64>,
    pub started_unix: f64,
    pub wall_clock_seconds: Option<f64>,
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub files: Vec<FileRecord>,
}

/// An output directory being filled by one run.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl RunDir {
    /// Create the directory and write the initial manifest.
    pub fn create(root: &Path, config_text: &str, config: &RunConfig, seed_override: Option<u64>) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            engine: config.kind().name().to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            config_text: config_text.to_string(),
            resolved_config: serde_json::to_value(config).map_err(io::Error::other)?,
            seeds: config.seeds.clone(),
            seed_override,
            started_unix,
            wall_clock_seconds: None,
            status: RunStatus::Running,
            failed_stage: None,
            files: Vec::new(),
        };
        let dir = Self { root: root.to_path_buf(), manifest, started: Instant::now() };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn write_manifest(&self) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.files.retain(|f| f.path != rel);
        self.manifest.files.push(FileRecord { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        self.write_bytes(rel, &bytes)
    }

    pub fn finish(&mut self, status: RunStatus, failed_stage: Option<String>) -> io::Result<()> {
        self.manifest.status = status;
        self.manifest.failed_stage = failed_stage;
        self.manifest.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        self.manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.write_manifest()
    }
}

/// Result of re-hashing the files a manifest lists.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
}

pub fn read_manifest(dir: &Path) -> io::Result<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn verify_run(dir: &Path, manifest: &RunManifest) -> VerifyReport {
    let mut report = VerifyReport { checked: 0, mismatched: Vec::new(), missing: Vec::new() };
    for f in &manifest.files {
        match fs::read(dir.join(&f.path)) {
            Ok(bytes) => {
                report.checked += 1;
                if sha256_hex(&bytes) != f.sha256 {
                    report.mismatched.push(f.path.clone());
                }
            }
            Err(_) => report.missing.push(f.path.clone()),
        }
    }
    report
}

/// Shortest round-trip decimal form, `nan`/`inf` spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}
