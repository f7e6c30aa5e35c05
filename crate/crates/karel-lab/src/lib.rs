//! Experiment orchestration: run configuration, stage bookkeeping and the
//! pipeline stages behind the `karel-lab` binary.

pub mod config;
pub mod pipeline;
pub mod stage;
