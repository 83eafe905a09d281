use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid loss value {value} (losses must be finite and non-negative)")]
    InvalidLoss { value: f64 },

    #[error("client {client} has no loss history for round {round}")]
    MissingHistory { client: usize, round: usize },

    #[error("degenerate cohort: {0} normalizer is zero")]
    DegenerateCohort(&'static str),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("dataset is empty")]
    EmptyData,

    #[error("non-finite parameter value at index {index}")]
    NonFiniteParam { index: usize },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("training diverged for client {client} in round {round}")]
    Divergence { round: usize, client: usize },

    #[error("invalid configuration: {field}: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("{path}: bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated IDX payload ({actual} bytes, header requires {expected})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: {extra} trailing bytes after IDX payload")]
    TrailingBytes { path: PathBuf, extra: usize },

    #[error("IDX image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error in {path}: {message}")]
    ConfigSyntax { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
