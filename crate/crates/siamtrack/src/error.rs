//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or feature-map shape did not match what an operation expects.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    /// NaN or infinity showed up in a numeric buffer.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An operation that needs points received an empty cloud.
    #[error("no support points: {0}")]
    EmptyCloud(&'static str),

    /// Geometric precondition violated (non-positive size, bad rotation, ...).
    #[error("invalid geometry: {0}")]
    Geometry(String),

    /// Configuration is inconsistent or a file failed to parse as config.
    #[error("config error: {0}")]
    Config(String),

    /// A data file is missing or malformed.
    #[error("data error in {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    /// Tracker could not be initialized (e.g. empty template crop).
    #[error("tracker init failed: {0}")]
    TrackerInit(String),

    /// Checkpoint file is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
