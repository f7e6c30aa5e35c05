//! Statistics over pipeline outputs: generative accuracy, least-squares fits,
//! bootstrap intervals, length summaries and perplexity by token group.

use std::collections::BTreeMap;

use karel::codec::{decode_program, prefix_len};
use karel::{check_correct, Example};
use lm::{token_nlls, LMParams, LmError, NllSum, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::tracer::DecodeRecord;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("x has zero variance")]
    ZeroVariance,
    #[error("series lengths differ ({0} vs {1})")]
    Mismatch(usize, usize),
    #[error("confidence level {0} is not in (0, 1)")]
    Level(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeAccuracy {
    pub step: usize,
    pub accuracy: f64,
    pub count: usize,
    pub correct: usize,
    pub malformed: usize,
    /// Keyed by reference program length.
    pub by_length: BTreeMap<usize, Tally>,
}

pub fn generative_accuracy(step: usize, decodes: &[DecodeRecord]) -> GenerativeAccuracy {
    let mut by: BTreeMap<usize, Tally> = BTreeMap::new();
    for d in decodes {
        let t = by.entry(d.reference_length).or_default();
        t.count += 1;
        t.correct += (d.well_formed && d.correct) as usize;
    }
    for t in by.values_mut() {
        t.accuracy = t.correct as f64 / t.count as f64;
    }
    let correct = by.values().map(|t| t.correct).sum();
    GenerativeAccuracy {
        step,
        accuracy: if decodes.is_empty() { 0.0 } else { correct as f64 / decodes.len() as f64 },
        count: decodes.len(),
        correct,
        malformed: decodes.iter().filter(|d| !d.well_formed).count(),
        by_length: by,
    }
}

/// Correctness re-derived from the raw tokens rather than the stored flags.
pub fn recheck_correct(decode: &DecodeRecord, example: &Example) -> bool {
    let Some(end) = decode.tokens.iter().position(|&t| t == karel::codec::END_ID) else {
        return false;
    };
    decode_program(&decode.tokens[..=end]).is_ok_and(|p| check_correct(&p, &example.spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `None` for a perfect fit, where the statistic is unbounded.
    pub t_stat: Option<f64>,
    /// Two-sided, from the slope's t statistic with n-2 degrees of freedom.
    pub p_value: f64,
    pub residuals: Vec<f64>,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<Regression, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Mismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { need: 3, got: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * nf {
        return Err(StatsError::ZeroVariance);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - (intercept + slope * a)).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let (t_stat, p_value) = if se == 0.0 {
        (None, if slope == 0.0 { 1.0 } else { 0.0 })
    } else {
        let t = slope / se;
        let dist = StudentsT::new(0.0, 1.0, nf - 2.0).expect("n > 2");
        (Some(t), 2.0 * dist.cdf(-t.abs()))
    };
    Ok(Regression {
        n,
        slope,
        intercept,
        r2,
        t_stat,
        p_value,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub statistic: String,
    pub method: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub n_resamples: usize,
    pub z0: f64,
    pub acceleration: f64,
}

impl BootstrapCi {
    pub fn overlaps(&self, other: &BootstrapCi) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sorted resampled means.
fn bootstrap_means(samples: &[f64], n_resamples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut out: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_input(samples: &[f64], level: f64) -> Result<(), StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Level(level));
    }
    Ok(())
}

/// Bias-corrected and accelerated interval for the mean.
pub fn bca_ci(samples: &[f64], n_resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi, StatsError> {
    bca_ci_with(samples, n_resamples, level, seed, None)
}

/// BCa with `(z0, a)` optionally forced; forcing `(0, 0)` gives the plain
/// percentile interval over the same resamples.
pub fn bca_ci_with(
    samples: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
    forced: Option<(f64, f64)>,
) -> Result<BootstrapCi, StatsError> {
    check_input(samples, level)?;
    let est = mean(samples);
    let mut ci = BootstrapCi {
        statistic: "mean".into(),
        method: "bca".into(),
        estimate: est,
        lower: est,
        upper: est,
        confidence: level,
        n_resamples,
        z0: 0.0,
        acceleration: 0.0,
    };
    if samples.iter().all(|&s| s == samples[0]) {
        return Ok(ci);
    }
    let boot = bootstrap_means(samples, n_resamples, seed);
    let normal = Normal::standard();
    let (z0, a) = match forced {
        Some(f) => f,
        None => {
            let below = boot.iter().filter(|&&b| b < est).count() as f64;
            let b = n_resamples as f64;
            let frac = below.clamp(0.5, b - 0.5) / b;
            let z0 = normal.inverse_cdf(frac);
            // Jackknife means via the leave-one-out identity.
            let n = samples.len() as f64;
            let total: f64 = samples.iter().sum();
            let jack: Vec<f64> = samples.iter().map(|s| (total - s) / (n - 1.0)).collect();
            let jm = mean(&jack);
            let num: f64 = jack.iter().map(|j| (jm - j).powi(3)).sum();
            let den: f64 = jack.iter().map(|j| (jm - j).powi(2)).sum::<f64>().powf(1.5);
            (z0, if den == 0.0 { 0.0 } else { num / (6.0 * den) })
        }
    };
    let alpha = (1.0 - level) / 2.0;
    let adjust = |q: f64| {
        let z = normal.inverse_cdf(q);
        normal.cdf(z0 + (z0 + z) / (1.0 - a * (z0 + z)))
    };
    let (ql, qu) = if forced == Some((0.0, 0.0)) {
        (alpha, 1.0 - alpha)
    } else {
        (adjust(alpha), adjust(1.0 - alpha))
    };
    ci.lower = quantile(&boot, ql).min(est);
    ci.upper = quantile(&boot, qu).max(est);
    ci.z0 = z0;
    ci.acceleration = a;
    Ok(ci)
}

/// Percentile interval over the same resamples `bca_ci` would draw.
pub fn percentile_ci(samples: &[f64], n_resamples: usize, level: f64, seed: u64) -> Result<(f64, f64), StatsError> {
    check_input(samples, level)?;
    let boot = bootstrap_means(samples, n_resamples, seed);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&boot, alpha), quantile(&boot, 1.0 - alpha)))
}

/// Mean and sample standard deviation of integer lengths, with exact
/// integer accumulation so that streamed and batch summaries agree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub n: usize,
    pub sum: u64,
    pub sum_sq: u64,
}

impl LengthStats {
    pub fn push(&mut self, len: usize) {
        self.n += 1;
        self.sum += len as u64;
        self.sum_sq += (len * len) as u64;
    }

    pub fn of(lengths: &[usize]) -> LengthStats {
        LengthStats {
            n: lengths.len(),
            sum: lengths.iter().map(|&l| l as u64).sum(),
            sum_sq: lengths.iter().map(|&l| (l * l) as u64).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }

    pub fn sd(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = (self.sum_sq as f64 - (self.sum as f64).powi(2) / n) / (n - 1.0);
        var.max(0.0).sqrt()
    }
}

/// Which target positions of an encoded example a perplexity averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenGroup {
    /// Every predicted position.
    All,
    /// Program tokens after `RUN`, `END` included.
    Program,
    /// Cells of input grid `k` (0-based).
    Input(usize),
    /// Cells of output grid `k` (0-based).
    Output(usize),
}

pub fn group_mask(group: TokenGroup, rows: usize, cols: usize, n_ios: usize, seq_len: usize) -> Vec<bool> {
    let rc = rows * cols;
    let pair = 2 * rc + 2;
    let mut m = vec![false; seq_len];
    let mut set = |range: std::ops::Range<usize>| m[range].iter_mut().for_each(|b| *b = true);
    match group {
        TokenGroup::All => set(1..seq_len),
        TokenGroup::Program => set(prefix_len(rows, cols, n_ios)..seq_len),
        TokenGroup::Input(k) => set(k * pair + 1..k * pair + 1 + rc),
        TokenGroup::Output(k) => set(k * pair + 2 + rc..(k + 1) * pair),
    }
    m
}

/// Perplexities of one model on one set of encoded examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityBreakdown {
    pub n_examples: usize,
    pub all: f64,
    pub program: f64,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

pub fn perplexity_breakdown<T: Scalar>(
    params: &LMParams<T>,
    seqs: &[Vec<u32>],
    rows: usize,
    cols: usize,
    n_ios: usize,
) -> Result<PerplexityBreakdown, LmError> {
    let mut groups = vec![TokenGroup::All, TokenGroup::Program];
    groups.extend((0..n_ios).map(TokenGroup::Input));
    groups.extend((0..n_ios).map(TokenGroup::Output));
    let parts: Vec<Vec<NllSum>> = seqs
        .par_iter()
        .map(|s| {
            let nll = token_nlls(params, s)?;
            Ok(groups
                .iter()
                .map(|&g| {
                    let mut acc = NllSum::default();
                    acc.add_masked(&nll, &group_mask(g, rows, cols, n_ios, s.len()));
                    acc
                })
                .collect())
        })
        .collect::<Result<_, LmError>>()?;
    let mut totals = vec![NllSum::default(); groups.len()];
    for p in parts {
        for (t, x) in totals.iter_mut().zip(p) {
            t.merge(x);
        }
    }
    let ppl: Vec<f64> = totals.iter().map(|t| t.perplexity()).collect::<Result<_, _>>()?;
    Ok(PerplexityBreakdown {
        n_examples: seqs.len(),
        all: ppl[0],
        program: ppl[1],
        input: ppl[2..2 + n_ios].to_vec(),
        output: ppl[2 + n_ios..].to_vec(),
    })
}

/// Perplexity of the model on its own greedy completions.
pub fn generated_perplexity(decodes: &[DecodeRecord]) -> Option<f64> {
    let tokens: usize = decodes.iter().map(|d| d.tokens.len()).sum();
    (tokens > 0).then(|| (-decodes.iter().map(|d| d.logprob).sum::<f64>() / tokens as f64).exp())
}
