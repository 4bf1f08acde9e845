//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input or configuration (bad counts, mismatched shapes, out-of-range values).
    #[error("validation: {0}")]
    Validation(String),

    /// A mathematically undefined operation (division by zero time, zero noise level).
    #[error("domain: {0}")]
    Domain(String),

    /// A metric has no qualifying pairs and the score is undefined (reported absent, not zero).
    #[error("undefined score: {0}")]
    UndefinedScore(String),

    /// A non-finite value appeared mid-run; names the sampler step and stage.
    #[error("non-finite value at step {step} ({stage})")]
    NonFinite { step: usize, stage: &'static str },

    /// Training diverged (loss above the abort threshold or NaN).
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },

    /// Structure file parse failure, with the byte offset of the offending token.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
