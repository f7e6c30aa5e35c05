//! A small GPT-style language model written against plain slices: manual
//! forward and backward passes, AdamW, checkpointing, cached greedy decoding
//! and per-layer hidden-state access.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod infer;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod params;
pub mod perplexity;
pub mod scalar;
pub mod train;

pub use checkpoint::{checkpoint_path, list_checkpoints, Checkpoint, CheckpointHeader};
pub use config::LMConfig;
pub use error::LmError;
pub use infer::{argmax, forward, greedy_decode, Decoded, ForwardOutput, Session};
pub use model::{Batch, TrainState, IGNORE};
pub use optim::AdamW;
pub use params::{LMParams, ParamLayout};
pub use perplexity::{perplexity, token_nlls, NllSum};
pub use scalar::Scalar;
pub use train::{batch_indices, make_batch, read_loss_log, train_to_dir, StepStats, Trainer};
