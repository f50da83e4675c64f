use std::io;

use thiserror::Error;

/// Errors raised anywhere in the hierarchy-graph pipeline.
#[derive(Debug, Error)]
pub enum HgtError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid taxonomy: {0}")]
    Validation(String),

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("classes without training images: {}", .0.join(", "))]
    EmptyClass(Vec<String>),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("cannot normalize zero-length vector (row {row})")]
    Normalization { row: usize },

    #[error("invalid probabilities: {0}")]
    Prob(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("non-finite value in {0}")]
    NaN(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, HgtError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> HgtError {
    HgtError::Shape(msg.into())
}
