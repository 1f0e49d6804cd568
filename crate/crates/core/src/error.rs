use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Orientation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no documents")]
    Empty(String),

    #[error("duplicate id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("orientation mismatch: expected {expected}, found {found}")]
    OrientationMismatch {
        expected: Orientation,
        found: Orientation,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tokenizer: {0}")]
    InvalidTokenizer(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds context length {context_length}")]
    SequenceTooLong { len: usize, context_length: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at optimizer step {step}: {what}")]
    NonFinite { step: usize, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input data rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFinite { .. })
    }
}
