use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unknown vocabulary terms: {}", .0.join(", "))]
    Vocabulary(Vec<String>),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("rank deficient matrix: smallest singular value {smallest:e} vs largest {largest:e}")]
    Rank { smallest: f64, largest: f64 },

    #[error("singular system: {0}; use a positive regularizer")]
    Singular(String),

    #[error("training diverged at step {step} (loss {loss})")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format { line, message: message.into() }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Rank { .. } | Error::Singular(_) | Error::TrainingDiverged { .. } => {
                ErrorClass::Numeric
            }
            Error::InvalidConfig(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
