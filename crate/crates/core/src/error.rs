use std::path::PathBuf;

use thiserror::Error;

/// Every failure the lab can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: usize, size: usize },

    #[error("cannot pool over an empty set of positions")]
    EmptyPool,

    #[error("document {0} has no tokens")]
    EmptyDocument(String),

    #[error("sequence of length {len} exceeds positional capacity {max}")]
    Capacity { len: usize, max: usize },

    #[error("vocabulary is empty")]
    EmptyVocab,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("poisoned gradient: non-finite value in {0}")]
    PoisonedGradient(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
