//! Per-token negative log-likelihoods and masked perplexity (natural log).

use crate::error::LmError;
use crate::infer::forward;
use crate::kernels::log_prob;
use crate::params::LMParams;
use crate::scalar::Scalar;

/// `nll[p]` is the NLL of `ids[p]` given `ids[..p]`, for `p >= 1`;
/// `nll[0]` is NaN because the first token is never predicted.
pub fn token_nlls<T: Scalar>(params: &LMParams<T>, ids: &[u32]) -> Result<Vec<f64>, LmError> {
    let out = forward(params, ids)?;
    let mut nll = vec![f64::NAN; ids.len()];
    for p in 1..ids.len() {
        nll[p] = -log_prob(out.logits_at(p - 1), ids[p] as usize);
    }
    Ok(nll)
}

/// Accumulates masked NLL totals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NllSum {
    pub total: f64,
    pub count: usize,
}

impl NllSum {
    pub fn add_masked(&mut self, nll: &[f64], mask: &[bool]) {
        assert_eq!(nll.len(), mask.len());
        for (&x, &m) in nll.iter().zip(mask) {
            if m {
                assert!(x.is_finite(), "position 0 cannot be selected");
                self.total += x;
                self.count += 1;
            }
        }
    }

    pub fn merge(&mut self, other: NllSum) {
        self.total += other.total;
        self.count += other.count;
    }

    pub fn mean(&self) -> Result<f64, LmError> {
        if self.count == 0 {
            return Err(LmError::Config("perplexity mask selects no positions".into()));
        }
        Ok(self.total / self.count as f64)
    }

    pub fn perplexity(&self) -> Result<f64, LmError> {
        self.mean().map(f64::exp)
    }
}

/// `exp(mean NLL)` over the positions selected by `masks[i]` in `seqs[i]`.
pub fn perplexity<T: Scalar>(params: &LMParams<T>, seqs: &[Vec<u32>], masks: &[Vec<bool>]) -> Result<f64, LmError> {
    assert_eq!(seqs.len(), masks.len());
    let mut acc = NllSum::default();
    for (s, m) in seqs.iter().zip(masks) {
        if m.iter().any(|&b| b) {
            acc.add_masked(&token_nlls(params, s)?, m);
        }
    }
    acc.perplexity()
}
