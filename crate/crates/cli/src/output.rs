//! CSV emission and the run manifest.
//!
//! CSV columns are fixed and documented in the README; floats are written
//! with Rust's shortest round-trip formatting, so files are byte-stable for
//! a given config and seed. The manifest records the config echo, seeds,
//! the g_sign resolution, versions, wall clock, and a sha256 for every
//! output file.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::AppError;

pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

impl OutputWriter {
    pub fn create(dir: &Path) -> Result<Self, AppError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| AppError::numeric(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_file(&mut self, name: &str, contents: &str) -> Result<(), AppError> {
        let path = self.dir.join(name);
        let mut f = std::fs::File::create(&path)
            .map_err(|e| AppError::numeric(format!("cannot write {}: {e}", path.display())))?;
        f.write_all(contents.as_bytes())
            .map_err(|e| AppError::numeric(format!("write {}: {e}", path.display())))?;
        let mut hasher = Sha256::new();
        hasher.update(contents.as_bytes());
        let digest = hasher.finalize();
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect::<String>();
        self.files.push(FileRecord {
            name: name.to_string(),
            bytes: contents.len(),
            sha256,
        });
        Ok(())
    }

    pub fn records(&self) -> &[FileRecord] {
        &self.files
    }
}

/// Builds a CSV from a header and rows of already-formatted cells.
pub fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

pub fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".to_string() // avoid "-0"
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GSignRecord {
    pub mode: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_corr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_literal: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_flipped: Option<f64>,
}

impl GSignRecord {
    pub fn default_sign() -> Self {
        Self {
            mode: "default".into(),
            value: 1.0,
            probe_corr: None,
            observed_drift: None,
            standard_error: None,
            z_literal: None,
            z_flipped: None,
        }
    }

    pub fn calibrated(ev: &icalab::simulate::GSignEvidence) -> Self {
        Self {
            mode: "calibrated".into(),
            value: ev.chosen,
            probe_corr: Some(ev.probe_corr),
            observed_drift: Some(ev.observed),
            standard_error: Some(ev.se),
            z_literal: Some(ev.z_plus),
            z_flipped: Some(ev.z_minus),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: String,
    /// Verbatim text of the config file that produced this run.
    pub config_echo: String,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub g_sign: GSignRecord,
    pub wall_clock_secs: f64,
    pub results: serde_json::Value,
    pub outputs: Vec<FileRecord>,
}

impl Manifest {
    pub fn write(mut self, writer: &mut OutputWriter) -> Result<(), AppError> {
        self.outputs = writer.records().to_vec();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| AppError::numeric(format!("manifest serialization: {e}")))?;
        let path = writer.dir().join("manifest.json");
        std::fs::write(&path, json)
            .map_err(|e| AppError::numeric(format!("write {}: {e}", path.display())))?;
        Ok(())
    }
}
