//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn jsonl(line: usize, message: impl Into<String>) -> Self {
        Error::Jsonl {
            line,
            message: message.into(),
        }
    }
}
