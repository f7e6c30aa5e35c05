//! Batched training forward and backward passes.
//!
//! Pre-norm decoder blocks:
//! `x += proj(attn(ln1(x)))`, `x += fcproj(gelu(fc(ln2(x))))`, then
//! `logits = head(lnf(x))`.

use crate::kernels::*;
use crate::params::{views, views_mut, LMParams};
use crate::scalar::Scalar;

/// Sentinel target meaning "no loss at this position".
pub const IGNORE: u32 = u32::MAX;

/// A padded batch: `tokens` and `targets` are `[batch, seq]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<u32>,
    pub targets: Vec<u32>,
}

impl Batch {
    /// Next-token targets for each sequence; positions whose successor is
    /// padding (or absent) are ignored.
    pub fn from_sequences(seqs: &[&[u32]], pad: u32) -> Batch {
        let seq = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut tokens = vec![pad; seqs.len() * seq];
        let mut targets = vec![IGNORE; seqs.len() * seq];
        for (b, s) in seqs.iter().enumerate() {
            tokens[b * seq..b * seq + s.len()].copy_from_slice(s);
            for t in 0..s.len().saturating_sub(1) {
                if s[t + 1] != pad {
                    targets[b * seq + t] = s[t + 1];
                }
            }
        }
        Batch {
            batch: seqs.len(),
            seq,
            tokens,
            targets,
        }
    }

    pub fn n_targets(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE).count()
    }
}

#[derive(Default)]
struct LayerActs<T> {
    ln1: Vec<T>,
    ln1_mean: Vec<T>,
    ln1_rstd: Vec<T>,
    qkv: Vec<T>,
    att: Vec<T>,
    atty: Vec<T>,
    resid_attn: Vec<T>,
    ln2: Vec<T>,
    ln2_mean: Vec<T>,
    ln2_rstd: Vec<T>,
    fch: Vec<T>,
    fch_gelu: Vec<T>,
    out: Vec<T>,
}

/// Activation and gradient buffers for one batch shape.
pub struct TrainState<T> {
    batch: usize,
    seq: usize,
    x0: Vec<T>,
    layers: Vec<LayerActs<T>>,
    lnf: Vec<T>,
    lnf_mean: Vec<T>,
    lnf_rstd: Vec<T>,
    probs: Vec<T>,
    /// Parameter gradients, laid out like the parameters.
    pub grads: Vec<T>,
}

fn zeros<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::zero(); n]
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: &LMParams<T>) -> TrainState<T> {
        TrainState {
            batch: 0,
            seq: 0,
            x0: Vec::new(),
            layers: (0..params.config.n_layers).map(|_| LayerActs::default()).collect(),
            lnf: Vec::new(),
            lnf_mean: Vec::new(),
            lnf_rstd: Vec::new(),
            probs: Vec::new(),
            grads: zeros(params.num_params()),
        }
    }

    fn ensure(&mut self, params: &LMParams<T>, batch: usize, seq: usize) {
        if self.batch == batch && self.seq == seq {
            return;
        }
        let cfg = &params.config;
        let (d, h, v) = (cfg.d_model, cfg.n_heads, cfg.vocab_size);
        let m = batch * seq;
        self.x0 = zeros(m * d);
        for l in &mut self.layers {
            *l = LayerActs {
                ln1: zeros(m * d),
                ln1_mean: zeros(m),
                ln1_rstd: zeros(m),
                qkv: zeros(m * 3 * d),
                att: zeros(batch * h * seq * seq),
                atty: zeros(m * d),
                resid_attn: zeros(m * d),
                ln2: zeros(m * d),
                ln2_mean: zeros(m),
                ln2_rstd: zeros(m),
                fch: zeros(m * 4 * d),
                fch_gelu: zeros(m * 4 * d),
                out: zeros(m * d),
            };
        }
        self.lnf = zeros(m * d);
        self.lnf_mean = zeros(m);
        self.lnf_rstd = zeros(m);
        self.probs = zeros(m * v);
        self.batch = batch;
        self.seq = seq;
    }

    /// Runs the forward pass and returns the mean next-token cross-entropy
    /// (nats) over non-ignored targets.
    pub fn forward(&mut self, params: &LMParams<T>, batch: &Batch) -> f64 {
        let cfg = &params.config;
        assert!(batch.seq <= cfg.context, "sequence longer than the context");
        self.ensure(params, batch.batch, batch.seq);
        let (d, v) = (cfg.d_model, cfg.vocab_size);
        let (bsz, t) = (batch.batch, batch.seq);
        let m = bsz * t;
        let w = params.weights();
        let shape = AttnShape {
            batch: bsz,
            seq: t,
            heads: cfg.n_heads,
            width: d,
        };

        for b in 0..bsz {
            for p in 0..t {
                let tok = batch.tokens[b * t + p] as usize;
                assert!(tok < v, "token id {tok} outside the vocabulary");
                let row = &mut self.x0[(b * t + p) * d..(b * t + p + 1) * d];
                for i in 0..d {
                    row[i] = w.wte[tok * d + i] + w.wpe[p * d + i];
                }
            }
        }

        for l in 0..cfg.n_layers {
            let (prev, rest) = self.layers.split_at_mut(l);
            let input: &[T] = if l == 0 { &self.x0 } else { &prev[l - 1].out };
            let a = &mut rest[0];
            let blk = &w.blocks[l];
            layernorm_forward(&mut a.ln1, &mut a.ln1_mean, &mut a.ln1_rstd, input, blk.ln1_g, blk.ln1_b, m, d);
            linear_forward(&mut a.qkv, &a.ln1, blk.qkv_w, blk.qkv_b, m, d, 3 * d);
            attention_forward(&mut a.atty, &mut a.att, &a.qkv, shape);
            linear_forward(&mut a.resid_attn, &a.atty, blk.proj_w, blk.proj_b, m, d, d);
            for (r, &x) in a.resid_attn.iter_mut().zip(input) {
                *r += x;
            }
            layernorm_forward(&mut a.ln2, &mut a.ln2_mean, &mut a.ln2_rstd, &a.resid_attn, blk.ln2_g, blk.ln2_b, m, d);
            linear_forward(&mut a.fch, &a.ln2, blk.fc_w, blk.fc_b, m, d, 4 * d);
            gelu_forward(&mut a.fch_gelu, &a.fch);
            linear_forward(&mut a.out, &a.fch_gelu, blk.fcproj_w, blk.fcproj_b, m, 4 * d, d);
            for (o, &r) in a.out.iter_mut().zip(&a.resid_attn) {
                *o += r;
            }
        }

        let last = &self.layers[cfg.n_layers - 1].out;
        layernorm_forward(&mut self.lnf, &mut self.lnf_mean, &mut self.lnf_rstd, last, w.lnf_g, w.lnf_b, m, d);
        linear_forward(&mut self.probs, &self.lnf, w.head_w, w.head_b, m, d, v);

        let mut loss = 0.0;
        let mut count = 0usize;
        for (row, &target) in self.probs.chunks_exact(v).zip(&batch.targets) {
            if target != IGNORE {
                loss -= log_prob(row, target as usize);
                count += 1;
            }
        }
        softmax_rows(&mut self.probs, v);
        if count == 0 {
            0.0
        } else {
            loss / count as f64
        }
    }

    /// Backward pass for the batch last given to [`TrainState::forward`];
    /// overwrites `self.grads`.
    pub fn backward(&mut self, params: &LMParams<T>, batch: &Batch) {
        let cfg = &params.config;
        let (d, v) = (cfg.d_model, cfg.vocab_size);
        let (bsz, t) = (batch.batch, batch.seq);
        let m = bsz * t;
        let shape = AttnShape {
            batch: bsz,
            seq: t,
            heads: cfg.n_heads,
            width: d,
        };
        let w = views(&params.data, &params.layout);
        self.grads.iter_mut().for_each(|g| *g = T::zero());
        let mut g = views_mut(&mut self.grads, &params.layout);

        let n = batch.n_targets().max(1);
        let inv = T::of(1.0 / n as f64);
        let mut dlogits = self.probs.clone();
        for (row, &target) in dlogits.chunks_exact_mut(v).zip(&batch.targets) {
            if target == IGNORE {
                row.iter_mut().for_each(|x| *x = T::zero());
            } else {
                row[target as usize] -= T::one();
                row.iter_mut().for_each(|x| *x *= inv);
            }
        }

        let mut dlnf = zeros::<T>(m * d);
        linear_backward(&mut dlnf, g.head_w, g.head_b, &dlogits, &self.lnf, w.head_w, m, d, v);
        let mut dresid = zeros::<T>(m * d);
        {
            let last = &self.layers[cfg.n_layers - 1].out;
            layernorm_backward(
                &mut dresid,
                g.lnf_g,
                g.lnf_b,
                &dlnf,
                last,
                w.lnf_g,
                &self.lnf_mean,
                &self.lnf_rstd,
                m,
                d,
            );
        }

        let mut dfch_gelu = zeros::<T>(m * 4 * d);
        let mut dfch = zeros::<T>(m * 4 * d);
        let mut dln2 = zeros::<T>(m * d);
        let mut datty = zeros::<T>(m * d);
        let mut dqkv = zeros::<T>(m * 3 * d);
        let mut dln1 = zeros::<T>(m * d);
        let mut scratch = zeros::<T>(t * t);

        for l in (0..cfg.n_layers).rev() {
            let a = &self.layers[l];
            let input: &[T] = if l == 0 { &self.x0 } else { &self.layers[l - 1].out };
            let blk = &w.blocks[l];
            let gb = &mut g.blocks[l];

            // MLP sub-block; dresid is the gradient w.r.t. the block output.
            dfch_gelu.iter_mut().for_each(|x| *x = T::zero());
            let mut dresid_attn = dresid.clone();
            linear_backward(&mut dfch_gelu, gb.fcproj_w, gb.fcproj_b, &dresid, &a.fch_gelu, blk.fcproj_w, m, 4 * d, d);
            dfch.iter_mut().for_each(|x| *x = T::zero());
            gelu_backward(&mut dfch, &a.fch, &dfch_gelu);
            dln2.iter_mut().for_each(|x| *x = T::zero());
            linear_backward(&mut dln2, gb.fc_w, gb.fc_b, &dfch, &a.ln2, blk.fc_w, m, d, 4 * d);
            layernorm_backward(
                &mut dresid_attn,
                gb.ln2_g,
                gb.ln2_b,
                &dln2,
                &a.resid_attn,
                blk.ln2_g,
                &a.ln2_mean,
                &a.ln2_rstd,
                m,
                d,
            );

            // Attention sub-block.
            let mut dinput = dresid_attn.clone();
            datty.iter_mut().for_each(|x| *x = T::zero());
            linear_backward(&mut datty, gb.proj_w, gb.proj_b, &dresid_attn, &a.atty, blk.proj_w, m, d, d);
            dqkv.iter_mut().for_each(|x| *x = T::zero());
            attention_backward(&mut dqkv, &mut scratch, &datty, &a.qkv, &a.att, shape);
            dln1.iter_mut().for_each(|x| *x = T::zero());
            linear_backward(&mut dln1, gb.qkv_w, gb.qkv_b, &dqkv, &a.ln1, blk.qkv_w, m, d, 3 * d);
            layernorm_backward(
                &mut dinput,
                gb.ln1_g,
                gb.ln1_b,
                &dln1,
                input,
                blk.ln1_g,
                &a.ln1_mean,
                &a.ln1_rstd,
                m,
                d,
            );
            dresid = dinput;
        }

        for b in 0..bsz {
            for p in 0..t {
                let tok = batch.tokens[b * t + p] as usize;
                let row = &dresid[(b * t + p) * d..(b * t + p + 1) * d];
                for i in 0..d {
                    g.wte[tok * d + i] += row[i];
                    g.wpe[p * d + i] += row[i];
                }
            }
        }
    }

    /// Softmax probabilities from the last forward pass, `[batch*seq, vocab]`.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Post-block residual stream of layer `l` from the last forward pass.
    pub fn layer_output(&self, l: usize) -> &[T] {
        &self.layers[l].out
    }
}
