use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: u64 },

    #[error("sparse indices must be strictly increasing (position {position})")]
    UnsortedIndices { position: usize },

    #[error("sparse index {index} out of range for dense length {len}")]
    IndexOutOfRange { index: u64, len: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sample id {id} out of range (dataset has {rows} rows)")]
    SampleOutOfRange { id: usize, rows: usize },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("causality violation: message computed at t={computed_at} but server is at t={server_t}")]
    Causality { computed_at: u64, server_t: u64 },

    #[error("requested lag {lag} exceeds history capacity {capacity}")]
    HistoryExceeded { lag: u64, capacity: usize },

    #[error("averaged iterate undefined before the first update")]
    NoUpdates,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{0}")]
    Unsupported(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
