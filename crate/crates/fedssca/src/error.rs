//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step-size schedule invalid: {0}")]
    Schedule(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("aggregation weight mismatch: client sizes sum to {got}, expected {expected}")]
    WeightMismatch { got: usize, expected: usize },

    #[error("batch count mismatch: stats carry {got} samples, expected batch size {expected}")]
    BatchCountMismatch { got: usize, expected: usize },

    #[error("penalty continuation exhausted: last slack {last_slack} above tolerance {tol}")]
    ContinuationExhausted { last_slack: f64, tol: f64 },

    #[error("{path}: bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file: need {need} bytes, have {have}")]
    Truncated {
        path: String,
        need: usize,
        have: usize,
    },

    #[error("sample count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("synthetic rejection sampling exceeded {attempts} attempts (margin too large)")]
    RejectionBudget { attempts: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
