//! Library error type. Contract violations inside tensor ops are panics
//! (they are programming errors); everything touching files, configs or
//! user input returns `Result`.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint/model mismatch: missing {missing:?}, unexpected {unexpected:?}")]
    CheckpointNames {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: u64, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
