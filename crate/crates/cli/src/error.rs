use std::path::PathBuf;

use prlf::PrlfError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {}: {source}", path.display())]
    MissingFile { path: PathBuf, source: std::io::Error },

    #[error("config {}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },

    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] PrlfError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage problems (bad flags, missing inputs, invalid config),
    /// 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::MissingFile { .. } | CliError::ConfigFile { .. } => 2,
            CliError::Core(PrlfError::Config(_)) => 2,
            _ => 1,
        }
    }
}
