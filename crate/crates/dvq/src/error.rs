//! Crate-wide error type.
//!
//! Numeric code fails in a small number of ways (shape mismatches, empty
//! inputs, non-finite values) and IO code in a few more (malformed files,
//! schema drift). One enum keeps the `Result` alias usable everywhere.

use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length along some axis.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A parameter value that can never be valid (zero codes, negative
    /// learning rate, indivisible split, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that needs at least one sample received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {context}")]
    Diverged { step: u64, context: String },

    /// A binary or CSV payload did not match its declared format.
    #[error("malformed data at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A file carried a different schema tag than the reader expects.
    #[error("schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
