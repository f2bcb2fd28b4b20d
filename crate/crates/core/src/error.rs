//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Invalid model or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A mask, score set, or parameter set is not aligned with its peer.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Malformed binary file. `offset` is the byte position of the defect.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Numerical failure (singular matrix, non-finite intermediate).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: usize, message: String },

    /// Invalid input data (CSV rows, score tables). `row` is 1-based.
    #[error("invalid input at row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    /// General validation failure on user-supplied values.
    #[error("validation error: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
