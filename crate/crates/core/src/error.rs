use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("non-numeric cell at ({row}, {col}): {value:?}")]
    NonNumeric { row: usize, col: usize, value: String },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pipeline step {index} ({step}) failed: {source}")]
    Step {
        index: usize,
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("bridge error: {0}")]
    Bridge(String),

    #[error("cannot start adapter {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("adapter speaks protocol version {got}, engine requires {expected}")]
    ProtocolVersion { expected: u64, got: String },

    #[error("adapter {op} timed out after {secs} s")]
    Timeout { op: String, secs: f64 },

    #[error("adapter error: {0}")]
    Adapter(String),

    #[error("no datasets")]
    NoDatasets,

    #[error("search failed: {0}")]
    Search(String),

    #[error("statistics error: {0}")]
    Stats(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
