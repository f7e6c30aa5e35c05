//! Linear probes: layer normalization followed by one linear map from a
//! model state to `n_ios` independent 4-way softmax groups.

use std::collections::BTreeMap;

use lm::kernels::{layernorm_backward, layernorm_forward, linear_backward, linear_forward};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ProbeConfig;
use crate::tracer::{Labels, TraceRecord};

pub const CLASSES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("no training records with labels at this offset")]
    EmptyTrainingSet,
    #[error("no evaluation records with labels at this offset")]
    EmptyTestSet,
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error("model states have width {got}, the probe expects {expected}")]
    Width { expected: usize, got: usize },
}

/// Probe inputs for one offset: row-major `x [n, width]` and labels
/// `y [n, heads]`. Every row has all of its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeData {
    pub width: usize,
    pub heads: usize,
    pub x: Vec<f32>,
    pub y: Vec<u8>,
    /// Trace depth (state index) of each row, for per-depth breakdowns.
    pub depth: Vec<usize>,
}

impl ProbeData {
    pub fn len(&self) -> usize {
        self.y.len() / self.heads.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows from `(state, labels, depth)` triples; rows whose labels are
    /// missing are dropped.
    pub fn from_rows<'a>(
        width: usize,
        heads: usize,
        rows: impl IntoIterator<Item = (&'a [f32], &'a [Option<u8>], usize)>,
    ) -> ProbeData {
        let mut d = ProbeData {
            width,
            heads,
            x: Vec::new(),
            y: Vec::new(),
            depth: Vec::new(),
        };
        for (state, labels, depth) in rows {
            assert_eq!(state.len(), width);
            assert_eq!(labels.len(), heads);
            if labels.iter().all(|l| l.is_some()) {
                d.x.extend_from_slice(state);
                d.y.extend(labels.iter().map(|l| l.expect("checked")));
                d.depth.push(depth);
            }
        }
        d
    }

    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.x.truncate(n * self.width);
            self.y.truncate(n * self.heads);
            self.depth.truncate(n);
        }
    }

    /// Same inputs, labels permuted across rows.
    pub fn shuffled_labels(&self, seed: u64) -> ProbeData {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        for (dst, &src) in idx.iter().enumerate() {
            out.y[dst * self.heads..(dst + 1) * self.heads].copy_from_slice(&self.y[src * self.heads..(src + 1) * self.heads]);
        }
        out
    }
}

/// Normalization then a single affine layer. With shared normalization one
/// gain/bias pair of width D serves all heads; otherwise each head gets its
/// own and sees its own normalized copy of the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub width: usize,
    pub heads: usize,
    pub shared_norm: bool,
    /// `[norms, width]`
    pub norm_g: Vec<f64>,
    pub norm_b: Vec<f64>,
    /// `[width, heads*4]` when shared, else `heads` blocks of `[width, 4]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ProbeModel {
    pub fn new(width: usize, heads: usize, shared_norm: bool, seed: u64) -> ProbeModel {
        use rand::Rng;
        let norms = if shared_norm { 1 } else { heads };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Uniform(-1/sqrt(D), 1/sqrt(D)), as in common linear-layer defaults.
        let bound = 1.0 / (width as f64).sqrt();
        ProbeModel {
            width,
            heads,
            shared_norm,
            norm_g: vec![1.0; norms * width],
            norm_b: vec![0.0; norms * width],
            w: (0..width * heads * CLASSES).map(|_| rng.random_range(-bound..bound)).collect(),
            b: vec![0.0; heads * CLASSES],
        }
    }

    pub fn num_linear_weights(&self) -> usize {
        self.w.len()
    }

    pub fn num_params(&self) -> usize {
        self.norm_g.len() + self.norm_b.len() + self.w.len() + self.b.len()
    }

    fn norms(&self) -> usize {
        if self.shared_norm {
            1
        } else {
            self.heads
        }
    }

    /// Logits `[n, heads*4]` for row-major inputs `[n, width]`.
    pub fn logits(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.forward(x, n).logits
    }

    fn forward(&self, x: &[f64], n: usize) -> Forward {
        let (d, k) = (self.width, self.heads * CLASSES);
        let mut normed = vec![vec![0.0; n * d]; self.norms()];
        let mut mean = vec![vec![0.0; n]; self.norms()];
        let mut rstd = vec![vec![0.0; n]; self.norms()];
        for g in 0..self.norms() {
            layernorm_forward(
                &mut normed[g],
                &mut mean[g],
                &mut rstd[g],
                x,
                &self.norm_g[g * d..(g + 1) * d],
                &self.norm_b[g * d..(g + 1) * d],
                n,
                d,
            );
        }
        let mut logits = vec![0.0; n * k];
        if self.shared_norm {
            linear_forward(&mut logits, &normed[0], &self.w, &self.b, n, d, k);
        } else {
            for h in 0..self.heads {
                let mut part = vec![0.0; n * CLASSES];
                let w = &self.w[h * d * CLASSES..(h + 1) * d * CLASSES];
                linear_forward(&mut part, &normed[h], w, &self.b[h * CLASSES..(h + 1) * CLASSES], n, d, CLASSES);
                for i in 0..n {
                    logits[i * k + h * CLASSES..i * k + (h + 1) * CLASSES].copy_from_slice(&part[i * CLASSES..(i + 1) * CLASSES]);
                }
            }
        }
        Forward {
            normed,
            mean,
            rstd,
            logits,
        }
    }

    /// Predicted class per row and head, `[n, heads]`.
    pub fn predict(&self, data: &ProbeData) -> Vec<u8> {
        let x: Vec<f64> = data.x.iter().map(|&v| v as f64).collect();
        let n = data.len();
        let logits = self.logits(&x, n);
        logits
            .chunks_exact(CLASSES)
            .map(|row| {
                let mut best = 0;
                for c in 1..CLASSES {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

struct Forward {
    normed: Vec<Vec<f64>>,
    mean: Vec<Vec<f64>>,
    rstd: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, p: &mut [&mut [f64]], g: &[&[f64]], lr: f64, wd: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        let mut i = 0;
        for (ps, gs) in p.iter_mut().zip(g) {
            for (x, &gr) in ps.iter_mut().zip(gs.iter()) {
                self.m[i] = B1 * self.m[i] + (1.0 - B1) * gr;
                self.v[i] = B2 * self.v[i] + (1.0 - B2) * gr * gr;
                let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                *x -= lr * (step + wd * *x);
                i += 1;
            }
        }
    }
}

/// Mean over rows and heads of the softmax cross-entropy; fills `dlogits`.
fn cross_entropy(logits: &[f64], y: &[u8], dlogits: &mut [f64], heads: usize) -> f64 {
    let n = y.len() / heads;
    let scale = 1.0 / (n * heads) as f64;
    let mut loss = 0.0;
    for (j, (row, d)) in logits.chunks_exact(CLASSES).zip(dlogits.chunks_exact_mut(CLASSES)).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let target = y[j] as usize;
        loss -= row[target] - max - z.ln();
        for c in 0..CLASSES {
            d[c] = ((row[c] - max).exp() / z - if c == target { 1.0 } else { 0.0 }) * scale;
        }
    }
    loss * scale
}

/// Trains a probe with AdamW, minibatches and the step learning-rate
/// schedule from `cfg`.
pub fn train_probe(data: &ProbeData, cfg: &ProbeConfig) -> Result<ProbeModel, ProbeError> {
    cfg.validate().map_err(ProbeError::Config)?;
    if data.is_empty() {
        return Err(ProbeError::EmptyTrainingSet);
    }
    let (d, heads) = (data.width, data.heads);
    let k = heads * CLASSES;
    let mut model = ProbeModel::new(d, heads, cfg.shared_norm, cfg.seed);
    let n_params = model.num_params();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = data.len().min(cfg.train_budget);
    let mut order: Vec<usize> = (0..n).collect();
    let mut xb = Vec::with_capacity(cfg.batch_size * d);
    let mut yb = Vec::with_capacity(cfg.batch_size * heads);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let m = chunk.len();
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend(data.x[i * d..(i + 1) * d].iter().map(|&v| v as f64));
                yb.extend_from_slice(&data.y[i * heads..(i + 1) * heads]);
            }
            let fw = model.forward(&xb, m);
            let mut dlogits = vec![0.0; m * k];
            cross_entropy(&fw.logits, &yb, &mut dlogits, heads);
            let grads = backward(&model, &fw, &xb, &dlogits, m);
            let ProbeModel {
                norm_g, norm_b, w, b, ..
            } = &mut model;
            adam.step(
                &mut [norm_g.as_mut_slice(), norm_b.as_mut_slice(), w.as_mut_slice(), b.as_mut_slice()],
                &[&grads.0, &grads.1, &grads.2, &grads.3],
                lr,
                cfg.weight_decay,
            );
        }
    }
    Ok(model)
}

type Grads = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn backward(model: &ProbeModel, fw: &Forward, x: &[f64], dlogits: &[f64], n: usize) -> Grads {
    let (d, k) = (model.width, model.heads * CLASSES);
    let mut dg = vec![0.0; model.norm_g.len()];
    let mut dbn = vec![0.0; model.norm_b.len()];
    let mut dw = vec![0.0; model.w.len()];
    let mut db = vec![0.0; model.b.len()];
    let mut dx = vec![0.0; n * d];
    let norm_back = |g: usize, dnormed: &[f64], dg: &mut [f64], dbn: &mut [f64], dx: &mut [f64]| {
        layernorm_backward(
            dx,
            &mut dg[g * d..(g + 1) * d],
            &mut dbn[g * d..(g + 1) * d],
            dnormed,
            x,
            &model.norm_g[g * d..(g + 1) * d],
            &fw.mean[g],
            &fw.rstd[g],
            n,
            d,
        );
    };
    if model.shared_norm {
        let mut dnormed = vec![0.0; n * d];
        linear_backward(&mut dnormed, &mut dw, &mut db, dlogits, &fw.normed[0], &model.w, n, d, k);
        norm_back(0, &dnormed, &mut dg, &mut dbn, &mut dx);
    } else {
        for h in 0..model.heads {
            let mut part = vec![0.0; n * CLASSES];
            for i in 0..n {
                part[i * CLASSES..(i + 1) * CLASSES].copy_from_slice(&dlogits[i * k + h * CLASSES..i * k + (h + 1) * CLASSES]);
            }
            let mut dnormed = vec![0.0; n * d];
            let wh = &model.w[h * d * CLASSES..(h + 1) * d * CLASSES];
            linear_backward(
                &mut dnormed,
                &mut dw[h * d * CLASSES..(h + 1) * d * CLASSES],
                &mut db[h * CLASSES..(h + 1) * CLASSES],
                &part,
                &fw.normed[h],
                wh,
                n,
                d,
                CLASSES,
            );
            norm_back(h, &dnormed, &mut dg, &mut dbn, &mut dx);
        }
    }
    (dg, dbn, dw, db)
}

/// Accuracy over every (row, head) label, with a breakdown by trace depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// Rows evaluated.
    pub n_records: usize,
    /// Labels evaluated (`n_records * heads`).
    pub n_labels: usize,
    /// depth -> (accuracy, labels)
    pub by_depth: BTreeMap<usize, (f64, usize)>,
}

pub fn accuracy_of(pred: &[u8], data: &ProbeData) -> Result<Accuracy, ProbeError> {
    if data.is_empty() {
        return Err(ProbeError::EmptyTestSet);
    }
    let heads = data.heads;
    let mut hit = 0usize;
    let mut by: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for i in 0..data.len() {
        let e = by.entry(data.depth[i]).or_default();
        for h in 0..heads {
            let ok = pred[i * heads + h] == data.y[i * heads + h];
            hit += ok as usize;
            e.0 += ok as usize;
            e.1 += 1;
        }
    }
    let total = data.len() * heads;
    Ok(Accuracy {
        accuracy: hit as f64 / total as f64,
        n_records: data.len(),
        n_labels: total,
        by_depth: by.into_iter().map(|(k, (h, t))| (k, (h as f64 / t as f64, t))).collect(),
    })
}

pub fn evaluate(model: &ProbeModel, data: &ProbeData) -> Result<Accuracy, ProbeError> {
    if data.width != model.width {
        return Err(ProbeError::Width {
            expected: model.width,
            got: data.width,
        });
    }
    accuracy_of(&model.predict(data), data)
}

/// Optimal current-to-future label map fit on the evaluation data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureBaseline {
    /// `map[current] = predicted future direction`
    pub map: [u8; CLASSES],
    pub accuracy: f64,
    pub n_labels: usize,
}

/// Pairs of (current, future) labels; picks the best future label for each
/// current label from the confusion counts (lowest index on ties).
pub fn future_baseline(pairs: &[(u8, u8)]) -> Result<FutureBaseline, ProbeError> {
    if pairs.is_empty() {
        return Err(ProbeError::EmptyTestSet);
    }
    let mut counts = [[0usize; CLASSES]; CLASSES];
    for &(c, f) in pairs {
        counts[c as usize][f as usize] += 1;
    }
    let mut map = [0u8; CLASSES];
    let mut hit = 0;
    for c in 0..CLASSES {
        let mut best = 0;
        for f in 1..CLASSES {
            if counts[c][f] > counts[c][best] {
                best = f;
            }
        }
        map[c] = best as u8;
        hit += counts[c][best];
    }
    Ok(FutureBaseline {
        map,
        accuracy: hit as f64 / pairs.len() as f64,
        n_labels: pairs.len(),
    })
}

/// Probe data for one offset from captured records. `labels[k]` are the
/// labels of `records[k]` (original or relabelled); returns the data and the
/// record index behind each row.
pub fn offset_data(records: &[TraceRecord], labels: &[Labels], offset_index: usize, offset: i32) -> (ProbeData, Vec<usize>) {
    assert_eq!(records.len(), labels.len());
    let width = records.first().map_or(0, |r| r.state.len());
    let heads = labels.first().map_or(0, |l| l[offset_index].len());
    let kept: Vec<usize> = (0..records.len())
        .filter(|&k| labels[k][offset_index].iter().all(|l| l.is_some()))
        .collect();
    let data = ProbeData::from_rows(
        width,
        heads,
        kept.iter().map(|&k| {
            let depth = (records[k].t as i64 + offset as i64) as usize;
            (records[k].state.as_slice(), labels[k][offset_index].as_slice(), depth)
        }),
    );
    (data, kept)
}

/// (current, future) label pairs over every record and input where both exist.
pub fn label_pairs(labels: &[Labels], current: usize, future: usize) -> Vec<(u8, u8)> {
    labels
        .iter()
        .flat_map(|l| l[current].iter().zip(&l[future]).filter_map(|(c, f)| Some(((*c)?, (*f)?))))
        .collect()
}

/// Accuracy of the future-offset probe on the (record, input) pairs where the
/// offset-0 probe is right. Predictions are `[rows, heads]` with row indices
/// mapped to records by the `rows_*` vectors from [`offset_data`].
pub fn conditional_accuracy(
    now: (&[u8], &ProbeData, &[usize]),
    future: (&[u8], &ProbeData, &[usize]),
) -> Option<(f64, usize)> {
    let heads = now.1.heads;
    let row_of: std::collections::HashMap<usize, usize> = now.2.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for (j, k) in future.2.iter().enumerate() {
        let Some(&i) = row_of.get(k) else { continue };
        for h in 0..heads {
            if now.0[i * heads + h] == now.1.y[i * heads + h] {
                total += 1;
                hit += (future.0[j * heads + h] == future.1.y[j * heads + h]) as usize;
            }
        }
    }
    (total > 0).then(|| (hit as f64 / total as f64, total))
}
