//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A configuration violates one of its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shape mismatch, reporting expected vs actual.
    #[error("shape error in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// An input value is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A manifest or config line could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A parsed value failed validation against configured ranges.
    #[error("validation error at line {line}, field `{field}`: {message}")]
    Validation {
        line: usize,
        field: String,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),

    /// Checkpoint bytes do not match their recorded checksum.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Checkpoint format version is not supported by this build.
    #[error("incompatible checkpoint: format version {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    /// Training produced a non-finite loss term.
    #[error("non-finite loss in term {term} ({context}); training aborted")]
    NonFinite { term: String, context: String },

    /// Structured-text (de)serialization failure.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// Whether this error is a usage/validation problem (CLI exit code 1)
    /// rather than a runtime failure (exit code 2).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape { .. }
                | Error::Domain(_)
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Format(_)
                | Error::VersionMismatch { .. }
        )
    }
}
