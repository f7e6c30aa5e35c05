use serde::{Deserialize, Serialize};

use crate::error::LmError;

/// Model shape and optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LMConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Maximum sequence length (learned positions).
    pub context: usize,
    pub vocab_size: usize,
    pub learning_rate: f64,
    /// Linear warmup length in steps.
    pub warmup_steps: usize,
    /// Cosine decay floor as a fraction of `learning_rate`.
    pub min_lr_ratio: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub checkpoint_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub init_std: f64,
    pub seed: u64,
    /// Generated-token cap for greedy decoding.
    pub decode_cap: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            context: 256,
            vocab_size: karel::codec::VOCAB_SIZE,
            learning_rate: 1e-3,
            warmup_steps: 500,
            min_lr_ratio: 0.1,
            batch_size: 16,
            total_steps: 20_000,
            checkpoint_interval: 1_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: 1.0,
            init_std: 0.02,
            seed: 0,
            decode_cap: 16,
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |msg: String| Err(LmError::Config(msg));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 {
            return bad("layers, heads and width must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.context == 0 || self.vocab_size == 0 {
            return bad("context and vocab_size must be positive".into());
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 {
            return bad("batch_size and checkpoint_interval must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("learning rate must be positive and min_lr_ratio in [0, 1]".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Learning rate at `step`: linear warmup then cosine decay to the floor.
    pub fn lr_at(&self, step: usize) -> f64 {
        let peak = self.learning_rate;
        if step < self.warmup_steps {
            return peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let horizon = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / horizon as f64).min(1.0);
        let floor = peak * self.min_lr_ratio;
        floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let cfg = LMConfig {
            warmup_steps: 10,
            total_steps: 110,
            ..Default::default()
        };
        assert!((cfg.lr_at(0) - 1e-4).abs() < 1e-12);
        assert!((cfg.lr_at(9) - 1e-3).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 1e-3).abs() < 1e-12);
        assert!((cfg.lr_at(110) - 1e-4).abs() < 1e-12);
        assert!(cfg.lr_at(60) < cfg.lr_at(30));
    }

    #[test]
    fn validation() {
        assert!(LMConfig::default().validate().is_ok());
        let bad = LMConfig {
            d_model: 30,
            n_heads: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
