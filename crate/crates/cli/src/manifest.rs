//! Run manifests: what ran, with which resolved config and inputs, and which
//! files it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// Summary of the importance vectors seen during an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuStats {
    pub samples: usize,
    /// (V, A, L) order.
    pub mean: [f64; 3],
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub dominant_counts: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 over the canonical config and the bytes of every input file.
    pub input_hash: String,
    pub inputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    /// Per evaluated variant, for commands that report importance.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub mu_stats: BTreeMap<String, MuStats>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Hash of the config followed by each input's name and contents.
pub fn input_hash(config: &RunConfig, inputs: &[PathBuf]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    for p in inputs {
        let bytes = std::fs::read(p).map_err(|source| CliError::MissingFile {
            path: p.clone(),
            source,
        })?;
        h.update(p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, CliError> {
        self.write_as(out, &self.command)
    }

    /// Writes `manifest-<stem>.json` into `out`.
    pub fn write_as(&self, out: &Path, stem: &str) -> Result<PathBuf, CliError> {
        let path = out.join(Self::file_name(stem));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The manifest with wall-clock fields cleared, for run-to-run comparison.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_at: String::new(),
            finished_at: String::new(),
            ..self.clone()
        }
    }
}
