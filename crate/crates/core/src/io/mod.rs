//! File formats, the telemetry/control wire protocol and live ingestion.

pub mod bus;
pub mod config;
pub mod embedding_file;
pub mod live;
pub mod manifest;
pub mod model_file;
pub mod recording_file;
pub mod server;
pub mod telemetry;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: t_ms {got} does not increase past {previous}")]
    ParseOrder { line: u64, previous: u64, got: u64 },
    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(String),
    #[error("invalid content: {0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> IoError {
        let path = path.into();
        move |source| IoError::File { path, source }
    }

    pub(crate) fn malformed(line: u64, reason: impl Into<String>) -> IoError {
        IoError::Malformed { line, reason: reason.into() }
    }
}
