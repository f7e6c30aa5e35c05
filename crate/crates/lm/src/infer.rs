//! Incremental inference with a key/value cache, the full-sequence forward
//! pass built on it, and greedy decoding.

use karel::codec::END_ID;

use crate::error::LmError;
use crate::kernels::{layernorm_forward, gelu_forward, linear_forward, causal_softmax_row};
use crate::params::LMParams;
use crate::scalar::{gemm, Mat, Scalar};

/// Logits and per-layer post-block hidden states for a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub positions: usize,
    pub vocab: usize,
    pub width: usize,
    /// `[positions, vocab]`
    pub logits: Vec<f32>,
    /// `[n_layers][positions, width]`
    pub hidden: Vec<Vec<f32>>,
    /// Token plus position embedding, `[positions, width]`.
    pub embedding: Vec<f32>,
}

impl ForwardOutput {
    pub fn logits_at(&self, pos: usize) -> &[f32] {
        &self.logits[pos * self.vocab..(pos + 1) * self.vocab]
    }

    pub fn hidden_at(&self, layer: usize, pos: usize) -> &[f32] {
        &self.hidden[layer][pos * self.width..(pos + 1) * self.width]
    }

    /// Mean of the layer outputs at `pos`, optionally counting the embedding
    /// as an extra layer.
    pub fn layer_mean(&self, pos: usize, include_embedding: bool) -> Vec<f32> {
        let mut rows: Vec<&[f32]> = (0..self.hidden.len()).map(|l| self.hidden_at(l, pos)).collect();
        if include_embedding {
            rows.push(&self.embedding[pos * self.width..(pos + 1) * self.width]);
        }
        mean_rows(&rows, self.width)
    }
}

fn mean_rows(rows: &[&[f32]], width: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; width];
    for r in rows {
        for (a, &x) in acc.iter_mut().zip(r.iter()) {
            *a += x as f64;
        }
    }
    let n = rows.len() as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Per-sequence inference state: cached keys and values for every layer.
pub struct Session<'a, T: Scalar> {
    params: &'a LMParams<T>,
    len: usize,
    /// `[n_layers][context, D]`
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

/// Outputs for the tokens fed in one [`Session::extend`] call.
pub struct StepOutput {
    pub logits: Vec<f32>,
    pub hidden: Vec<Vec<f32>>,
    pub embedding: Vec<f32>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(params: &'a LMParams<T>) -> Session<'a, T> {
        let cfg = &params.config;
        let n = cfg.context * cfg.d_model;
        Session {
            params,
            len: 0,
            keys: vec![vec![T::zero(); n]; cfg.n_layers],
            values: vec![vec![T::zero(); n]; cfg.n_layers],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds `tokens` after everything seen so far and returns their logits
    /// and hidden states.
    pub fn extend(&mut self, tokens: &[u32]) -> Result<StepOutput, LmError> {
        let cfg = &self.params.config;
        let (d, v, nh) = (cfg.d_model, cfg.vocab_size, cfg.n_heads);
        let hs = cfg.head_dim();
        let n = tokens.len();
        let p0 = self.len;
        if p0 + n > cfg.context {
            return Err(LmError::ContextOverflow {
                len: p0 + n,
                context: cfg.context,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= v) {
            return Err(LmError::BadToken(bad));
        }
        let w = self.params.weights();
        let mut x = vec![T::zero(); n * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let pos = p0 + i;
            for j in 0..d {
                x[i * d + j] = w.wte[tok as usize * d + j] + w.wpe[pos * d + j];
            }
        }
        let embedding = x.iter().map(|v| v.f64() as f32).collect();
        let mut hidden = Vec::with_capacity(cfg.n_layers);

        let total = p0 + n;
        let scale = T::of(1.0 / (hs as f64).sqrt());
        let mut ln = vec![T::zero(); n * d];
        let mut mean = vec![T::zero(); n];
        let mut rstd = vec![T::zero(); n];
        let mut qkv = vec![T::zero(); n * 3 * d];
        let mut y = vec![T::zero(); n * d];
        let mut att = vec![T::zero(); n * total];
        let mut tmp = vec![T::zero(); n * d];
        let mut fc = vec![T::zero(); n * 4 * d];
        let mut fcg = vec![T::zero(); n * 4 * d];

        for (l, blk) in w.blocks.iter().enumerate() {
            layernorm_forward(&mut ln, &mut mean, &mut rstd, &x, blk.ln1_g, blk.ln1_b, n, d);
            linear_forward(&mut qkv, &ln, blk.qkv_w, blk.qkv_b, n, d, 3 * d);
            for i in 0..n {
                let row = &qkv[i * 3 * d..(i + 1) * 3 * d];
                self.keys[l][(p0 + i) * d..(p0 + i + 1) * d].copy_from_slice(&row[d..2 * d]);
                self.values[l][(p0 + i) * d..(p0 + i + 1) * d].copy_from_slice(&row[2 * d..]);
            }
            let (kc, vc) = (&self.keys[l], &self.values[l]);
            for h in 0..nh {
                gemm(
                    scale,
                    &qkv[h * hs..],
                    Mat::strided(n, hs, 3 * d),
                    &kc[h * hs..],
                    Mat::strided(total, hs, d).t(),
                    T::zero(),
                    &mut att,
                    Mat::rm(n, total),
                );
                for i in 0..n {
                    causal_softmax_row(&mut att[i * total..(i + 1) * total], p0 + i);
                }
                gemm(
                    T::one(),
                    &att,
                    Mat::rm(n, total),
                    &vc[h * hs..],
                    Mat::strided(total, hs, d),
                    T::zero(),
                    &mut y[h * hs..],
                    Mat::strided(n, hs, d),
                );
            }
            linear_forward(&mut tmp, &y, blk.proj_w, blk.proj_b, n, d, d);
            for (a, &b) in x.iter_mut().zip(&tmp) {
                *a += b;
            }
            layernorm_forward(&mut ln, &mut mean, &mut rstd, &x, blk.ln2_g, blk.ln2_b, n, d);
            linear_forward(&mut fc, &ln, blk.fc_w, blk.fc_b, n, d, 4 * d);
            gelu_forward(&mut fcg, &fc);
            linear_forward(&mut tmp, &fcg, blk.fcproj_w, blk.fcproj_b, n, 4 * d, d);
            for (a, &b) in x.iter_mut().zip(&tmp) {
                *a += b;
            }
            hidden.push(x.iter().map(|v| v.f64() as f32).collect());
        }
        layernorm_forward(&mut ln, &mut mean, &mut rstd, &x, w.lnf_g, w.lnf_b, n, d);
        let mut logits = vec![T::zero(); n * v];
        linear_forward(&mut logits, &ln, w.head_w, w.head_b, n, d, v);
        self.len = total;
        Ok(StepOutput {
            logits: logits.iter().map(|v| v.f64() as f32).collect(),
            hidden,
            embedding,
        })
    }
}

/// Full causal forward pass over `ids`.
pub fn forward<T: Scalar>(params: &LMParams<T>, ids: &[u32]) -> Result<ForwardOutput, LmError> {
    let out = Session::new(params).extend(ids)?;
    Ok(ForwardOutput {
        positions: ids.len(),
        vocab: params.config.vocab_size,
        width: params.config.d_model,
        logits: out.logits,
        hidden: out.hidden,
        embedding: out.embedding,
    })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Result of greedy decoding after a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Generated ids, including END when it was produced.
    pub tokens: Vec<u32>,
    /// Log-probability of each generated token under the model.
    pub logprobs: Vec<f64>,
    /// Layer-mean hidden state at each generated token's position (after the
    /// token is fed back), for every token except a final END.
    pub states: Vec<Vec<f32>>,
    /// Whether decoding stopped on END within the cap.
    pub finished: bool,
}

fn log_softmax_at(row: &[f32], i: usize) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = row.iter().map(|&x| (x as f64 - max).exp()).sum::<f64>().ln() + max;
    row[i] as f64 - lse
}

/// Greedily extends `prefix` by up to `cap` tokens, stopping after END.
///
/// With `cap == 0` nothing is generated and `finished` is false.
pub fn greedy_decode<T: Scalar>(
    params: &LMParams<T>,
    prefix: &[u32],
    cap: usize,
    include_embedding: bool,
) -> Result<Decoded, LmError> {
    let mut out = Decoded {
        tokens: Vec::new(),
        logprobs: Vec::new(),
        states: Vec::new(),
        finished: false,
    };
    if cap == 0 {
        return Ok(out);
    }
    let v = params.config.vocab_size;
    let mut session = Session::new(params);
    let first = session.extend(prefix)?;
    let mut logits = first.logits[first.logits.len() - v..].to_vec();
    let room = params.config.context.saturating_sub(prefix.len());
    for _ in 0..cap {
        let next = argmax(&logits);
        out.logprobs.push(log_softmax_at(&logits, next));
        out.tokens.push(next as u32);
        if next as u32 == END_ID {
            out.finished = true;
            break;
        }
        if out.tokens.len() >= room {
            break;
        }
        let step = session.extend(&[next as u32])?;
        let rows: Vec<&[f32]> = step
            .hidden
            .iter()
            .map(|h| h.as_slice())
            .chain(include_embedding.then_some(step.embedding.as_slice()))
            .collect();
        out.states.push(mean_rows(&rows, params.config.d_model));
        logits = step.logits;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.0, 2.0, 2.0, 1.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }
}
