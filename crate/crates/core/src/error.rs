use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("scale must be positive and finite (component {index} is {value})")]
    InvalidScale { index: usize, value: f64 },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("sequence too short: {context} needs at least {min} steps, got {actual}")]
    SequenceTooShort { context: &'static str, min: usize, actual: usize },

    #[error("training stage error: {0}")]
    Stage(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("not a checkpoint: {0}")]
    NotACheckpoint(PathBuf),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape mismatch for tensor `{name}`: checkpoint has {found:?}, configuration expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("truncated file {0}")]
    Truncated(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
