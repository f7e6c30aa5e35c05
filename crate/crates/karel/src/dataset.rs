//! Training and test examples: a sampled reference program together with the
//! input-output pairs it produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::observation::{observe, IoPair};
use crate::program::{run, Program};
use crate::sampler::{sample_input, sample_program, GrammarConfig, InputSamplerConfig};

/// A specification followed by the program that generated it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub spec: Vec<IoPair>,
    pub reference: Program,
}

impl Example {
    pub fn n_ios(&self) -> usize {
        self.spec.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub grammar: GrammarConfig,
    pub inputs: InputSamplerConfig,
    pub n_ios: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grammar.validate()?;
        self.inputs.validate()?;
        if self.n_ios == 0 {
            return Err(ConfigError::NoExamples);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub seed: u64,
    pub config: DatasetConfig,
    pub examples: Vec<Example>,
}

/// Builds one example from its own RNG stream.
pub fn build_example(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Example {
    let reference = sample_program(&cfg.grammar, rng);
    let spec = (0..cfg.n_ios)
        .map(|_| {
            let input = sample_input(&cfg.inputs, rng);
            let output = run(&reference, &input);
            IoPair {
                input: observe(&input),
                output: observe(&output),
            }
        })
        .collect();
    Example { spec, reference }
}

/// RNG stream for example `index`: the dataset seed selects the key and the
/// index selects the ChaCha stream, so examples are independent of how the
/// work is scheduled.
pub fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn build_dataset(n: usize, cfg: &DatasetConfig, seed: u64, split: Split) -> Result<Dataset, ConfigError> {
    cfg.validate()?;
    let examples = (0..n)
        .into_par_iter()
        .map(|i| build_example(cfg, &mut example_rng(seed, i)))
        .collect();
    Ok(Dataset {
        split,
        seed,
        config: cfg.clone(),
        examples,
    })
}
