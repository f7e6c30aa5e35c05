use serde::{Deserialize, Serialize};

/// What to snapshot while decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureConfig {
    /// Training specs decoded per checkpoint to build probe training data.
    pub train_specs: usize,
    /// Test specs decoded per checkpoint; 0 means the whole test split.
    pub test_specs: usize,
    /// Count the embedding output as an extra layer in the layer average.
    pub include_embedding: bool,
    /// Checkpoint steps to capture; empty means every saved checkpoint.
    pub steps: Vec<usize>,
    /// Also write a packed little-endian binary twin of each trace file.
    pub binary_twin: bool,
    /// Trace the teacher-forced reference program for specs whose greedy
    /// completion is malformed, so early checkpoints still yield records.
    pub reference_fallback: bool,
}

impl CaptureConfig {
    pub fn options(&self) -> crate::tracer::CaptureOptions {
        crate::tracer::CaptureOptions {
            include_embedding: self.include_embedding,
            reference_fallback: self.reference_fallback,
        }
    }
}

impl Default for CaptureConfig {
    fn default() -> Self {
        CaptureConfig {
            train_specs: 3000,
            test_specs: 0,
            include_embedding: false,
            steps: Vec::new(),
            binary_twin: false,
            reference_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLoss {
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Maximum number of training records, taken in capture order.
    pub train_budget: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub decay_epochs: Vec<usize>,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub loss: ProbeLoss,
    /// One normalization shared by all per-input heads (otherwise one per head).
    pub shared_norm: bool,
    /// Derived from the master seed when the run config is resolved.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_budget: 100_000,
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.01,
            decay_epochs: vec![75, 90],
            lr_decay: 0.1,
            weight_decay: 1e-4,
            loss: ProbeLoss::CrossEntropy,
            shared_norm: true,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.train_budget == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err("probe budget, epochs and batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || self.weight_decay < 0.0 {
            return Err("probe learning rate and decay must be positive".into());
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.lr_decay.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    /// Fixed, seeded subsample of training examples used for perplexity.
    pub perplexity_train_subsample: usize,
    /// Checkpoints at which perplexity is measured; empty means all.
    pub perplexity_steps: Vec<usize>,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bootstrap_resamples: 9999,
            confidence: 0.95,
            perplexity_train_subsample: 10_000,
            perplexity_steps: Vec::new(),
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay() {
        let p = ProbeConfig::default();
        assert_eq!(p.lr_at_epoch(0), 0.01);
        assert_eq!(p.lr_at_epoch(74), 0.01);
        assert!((p.lr_at_epoch(75) - 0.001).abs() < 1e-15);
        assert!((p.lr_at_epoch(99) - 0.0001).abs() < 1e-15);
    }
}
