use thiserror::Error;

/// Errors produced by the closure-modeling toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported boundary condition: {0}")]
    UnsupportedBoundary(String),

    #[error("simulation diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("non-finite value produced by primitive `{op}`")]
    NonFinite { op: &'static str },

    #[error("SGS content is identically zero; no compression direction is defined")]
    DegenerateCompression,

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
