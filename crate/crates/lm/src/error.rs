use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the context of {context}")]
    ContextOverflow { len: usize, context: usize },
    #[error("loss diverged at step {step} (value {value})")]
    Diverged { step: usize, value: f64 },
    #[error("no training sequences")]
    EmptyCorpus,
    #[error("token id {0} outside the vocabulary")]
    BadToken(u32),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
