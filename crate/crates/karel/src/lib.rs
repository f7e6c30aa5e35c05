//! Straight-line Karel.
//!
//! Exact semantics of the five-action Karel subset, the facing-direction
//! abstraction, alternative-semantics retracing, the random program and world
//! samplers, and the token encoding shared by every pipeline stage.

pub mod abstraction;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod observation;
pub mod program;
pub mod sampler;
pub mod semantics;
pub mod world;

pub use abstraction::{abstract_step, alpha, AbstractState};
pub use dataset::{build_dataset, Dataset, DatasetConfig, Example, Split};
pub use error::{CodecError, ConfigError, CorpusError, WorldError};
pub use observation::{check_correct, observe, GridToken, IoPair, Observation};
pub use program::{run, run_trace, Program, Trace};
pub use sampler::{sample_input, sample_program, GrammarConfig, InputSamplerConfig};
pub use semantics::{retrace_alternative, Semantics, SemanticsMap};
pub use world::{step, Cell, Direction, Op, WorldState, MAX_MARKERS};
