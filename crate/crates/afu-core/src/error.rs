//! Crate-wide error type.
//!
//! Shape mismatches on the hot paths (forward/backward) are programmer
//! errors and panic via `assert!`; everything user-facing (configuration,
//! empty batches, numerical aborts, snapshot IO) goes through [`Error`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A hyperparameter or config field is outside its valid range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation that needs at least one element got none.
    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    /// A gradient or loss stopped being finite.
    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    /// Replay insert with a shape inconsistent with stored transitions.
    #[error("transition shape mismatch: {0}")]
    TransitionShape(String),

    /// Unknown environment, method, or variant name.
    #[error("unknown name: {0}")]
    UnknownName(String),

    #[error("snapshot version {found} not supported (expected {expected})")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
