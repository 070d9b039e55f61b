//! Crate-wide error type with CLI exit-code mapping.

use thiserror::Error;

/// Errors surfaced by the pipeline.
///
/// The three explicit categories map onto process exit codes so that
/// scripted callers can distinguish "fix your configuration" from "your
/// inputs are broken" from "the numerics blew up".
#[derive(Debug, Error)]
pub enum MalsiamError {
    /// Invalid or inconsistent configuration (bad flag values, unreadable
    /// config files, digest mismatches). Exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// Missing or malformed data artifacts (corpus, feature files,
    /// checkpoints). Exit code 3.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure during training or evaluation (non-finite loss,
    /// failed convergence). Exit code 4.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON artifact.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MalsiamError {
    /// Process exit code for this error. Success is 0; configuration
    /// problems exit 2, data problems 3, numeric failures 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            MalsiamError::Config(_) => 2,
            MalsiamError::Data(_) | MalsiamError::Io(_) | MalsiamError::Json(_) => 3,
            MalsiamError::Numeric(_) => 4,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, MalsiamError>;
