//! Trace capture, linear probing and statistics for the Karel language-model experiments.

pub mod analysis;
pub mod config;
pub mod content;
pub mod probe;
pub mod report;
pub mod tracer;

pub use config::{AnalysisConfig, CaptureConfig, ProbeConfig, ProbeLoss};
