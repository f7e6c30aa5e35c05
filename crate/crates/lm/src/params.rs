//! Flat parameter storage with a named tensor layout.
//!
//! Tensor order: `wte [V,D]`, `wpe [C,D]`, then per block
//! `ln1_g [D]`, `ln1_b [D]`, `qkv_w [D,3D]`, `qkv_b [3D]`, `proj_w [D,D]`,
//! `proj_b [D]`, `ln2_g [D]`, `ln2_b [D]`, `fc_w [D,4D]`, `fc_b [4D]`,
//! `fcproj_w [4D,D]`, `fcproj_b [D]`, and finally `lnf_g [D]`, `lnf_b [D]`,
//! `head_w [D,V]`, `head_b [V]`. Weight matrices are stored `[in, out]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::LMConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const BLOCK_TENSORS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &LMConfig) -> ParamLayout {
        let (v, c, d) = (cfg.vocab_size, cfg.context, cfg.d_model);
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let info = TensorInfo { name, shape, offset };
            offset += info.len();
            tensors.push(info);
        };
        push("wte".into(), vec![v, d]);
        push("wpe".into(), vec![c, d]);
        for l in 0..cfg.n_layers {
            push(format!("h{l}.ln1_g"), vec![d]);
            push(format!("h{l}.ln1_b"), vec![d]);
            push(format!("h{l}.qkv_w"), vec![d, 3 * d]);
            push(format!("h{l}.qkv_b"), vec![3 * d]);
            push(format!("h{l}.proj_w"), vec![d, d]);
            push(format!("h{l}.proj_b"), vec![d]);
            push(format!("h{l}.ln2_g"), vec![d]);
            push(format!("h{l}.ln2_b"), vec![d]);
            push(format!("h{l}.fc_w"), vec![d, 4 * d]);
            push(format!("h{l}.fc_b"), vec![4 * d]);
            push(format!("h{l}.fcproj_w"), vec![4 * d, d]);
            push(format!("h{l}.fcproj_b"), vec![d]);
        }
        push("lnf_g".into(), vec![d]);
        push("lnf_b".into(), vec![d]);
        push("head_w".into(), vec![d, v]);
        push("head_b".into(), vec![v]);
        ParamLayout { tensors, total: offset }
    }

    pub fn find(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Borrowed views of every block tensor.
pub struct Block<'a, T> {
    pub ln1_g: &'a [T],
    pub ln1_b: &'a [T],
    pub qkv_w: &'a [T],
    pub qkv_b: &'a [T],
    pub proj_w: &'a [T],
    pub proj_b: &'a [T],
    pub ln2_g: &'a [T],
    pub ln2_b: &'a [T],
    pub fc_w: &'a [T],
    pub fc_b: &'a [T],
    pub fcproj_w: &'a [T],
    pub fcproj_b: &'a [T],
}

pub struct Weights<'a, T> {
    pub wte: &'a [T],
    pub wpe: &'a [T],
    pub blocks: Vec<Block<'a, T>>,
    pub lnf_g: &'a [T],
    pub lnf_b: &'a [T],
    pub head_w: &'a [T],
    pub head_b: &'a [T],
}

pub struct BlockMut<'a, T> {
    pub ln1_g: &'a mut [T],
    pub ln1_b: &'a mut [T],
    pub qkv_w: &'a mut [T],
    pub qkv_b: &'a mut [T],
    pub proj_w: &'a mut [T],
    pub proj_b: &'a mut [T],
    pub ln2_g: &'a mut [T],
    pub ln2_b: &'a mut [T],
    pub fc_w: &'a mut [T],
    pub fc_b: &'a mut [T],
    pub fcproj_w: &'a mut [T],
    pub fcproj_b: &'a mut [T],
}

pub struct WeightsMut<'a, T> {
    pub wte: &'a mut [T],
    pub wpe: &'a mut [T],
    pub blocks: Vec<BlockMut<'a, T>>,
    pub lnf_g: &'a mut [T],
    pub lnf_b: &'a mut [T],
    pub head_w: &'a mut [T],
    pub head_b: &'a mut [T],
}

fn carve<'a, T>(mut buf: &'a [T], layout: &ParamLayout) -> Vec<&'a [T]> {
    layout
        .tensors
        .iter()
        .map(|t| {
            let (head, rest) = buf.split_at(t.len());
            buf = rest;
            head
        })
        .collect()
}

fn carve_mut<'a, T>(mut buf: &'a mut [T], layout: &ParamLayout) -> Vec<&'a mut [T]> {
    layout
        .tensors
        .iter()
        .map(|t| {
            let (head, rest) = std::mem::take(&mut buf).split_at_mut(t.len());
            buf = rest;
            head
        })
        .collect()
}

pub fn views<'a, T>(buf: &'a [T], layout: &ParamLayout) -> Weights<'a, T> {
    let mut it = carve(buf, layout).into_iter();
    let mut next = || it.next().expect("layout tensor");
    let wte = next();
    let wpe = next();
    let n_layers = (layout.tensors.len() - 6) / BLOCK_TENSORS;
    let blocks = (0..n_layers)
        .map(|_| Block {
            ln1_g: next(),
            ln1_b: next(),
            qkv_w: next(),
            qkv_b: next(),
            proj_w: next(),
            proj_b: next(),
            ln2_g: next(),
            ln2_b: next(),
            fc_w: next(),
            fc_b: next(),
            fcproj_w: next(),
            fcproj_b: next(),
        })
        .collect();
    Weights {
        wte,
        wpe,
        blocks,
        lnf_g: next(),
        lnf_b: next(),
        head_w: next(),
        head_b: next(),
    }
}

pub fn views_mut<'a, T>(buf: &'a mut [T], layout: &ParamLayout) -> WeightsMut<'a, T> {
    let n_layers = (layout.tensors.len() - 6) / BLOCK_TENSORS;
    let mut it = carve_mut(buf, layout).into_iter();
    let mut next = || it.next().expect("layout tensor");
    let wte = next();
    let wpe = next();
    let blocks = (0..n_layers)
        .map(|_| BlockMut {
            ln1_g: next(),
            ln1_b: next(),
            qkv_w: next(),
            qkv_b: next(),
            proj_w: next(),
            proj_b: next(),
            ln2_g: next(),
            ln2_b: next(),
            fc_w: next(),
            fc_b: next(),
            fcproj_w: next(),
            fcproj_b: next(),
        })
        .collect();
    WeightsMut {
        wte,
        wpe,
        blocks,
        lnf_g: next(),
        lnf_b: next(),
        head_w: next(),
        head_b: next(),
    }
}

/// Model parameters: configuration, layout and a flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LMParams<T> {
    pub config: LMConfig,
    pub layout: ParamLayout,
    pub data: Vec<T>,
}

impl<T: Scalar> LMParams<T> {
    pub fn zeros(config: &LMConfig) -> LMParams<T> {
        let layout = ParamLayout::new(config);
        LMParams {
            config: config.clone(),
            data: vec![T::zero(); layout.total],
            layout,
        }
    }

    /// GPT-2 style init: normal(0, std) weights, residual projections scaled by
    /// `1/sqrt(2 * n_layers)`, unit layer-norm gains, zero biases.
    pub fn init(config: &LMConfig) -> LMParams<T> {
        let mut p = LMParams::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = config.init_std;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        for t in &p.layout.tensors {
            let base = t.name.rsplit('.').next().unwrap_or(&t.name);
            let slice = &mut p.data[t.offset..t.offset + t.len()];
            match base {
                "ln1_g" | "ln2_g" | "lnf_g" => slice.fill(T::one()),
                _ if base.ends_with("_b") => slice.fill(T::zero()),
                _ => {
                    let s = if base == "proj_w" || base == "fcproj_w" { resid_std } else { std };
                    let normal = Normal::new(0.0, s).expect("positive std");
                    for x in slice.iter_mut() {
                        *x = T::of(normal.sample(&mut rng));
                    }
                }
            }
        }
        p
    }

    pub fn weights(&self) -> Weights<'_, T> {
        views(&self.data, &self.layout)
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> LMParams<U> {
        LMParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|&x| U::of(x.f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_accounts_for_every_parameter() {
        let cfg = LMConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            context: 12,
            vocab_size: 26,
            ..Default::default()
        };
        let layout = ParamLayout::new(&cfg);
        let d = 16;
        let block = 2 * d + 3 * d * d + 3 * d + d * d + d + 2 * d + 4 * d * d + 4 * d + 4 * d * d + d;
        assert_eq!(layout.total, 26 * d + 12 * d + 2 * block + 2 * d + d * 26 + 26);
        assert_eq!(layout.tensors.len(), 6 + 2 * BLOCK_TENSORS);
        let p = LMParams::<f32>::init(&cfg);
        let w = p.weights();
        assert_eq!(w.blocks.len(), 2);
        assert_eq!(w.blocks[1].fcproj_w.len(), 4 * d * d);
        assert!(w.blocks[0].ln1_g.iter().all(|&g| g == 1.0));
        assert!(p.all_finite());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = LMConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            context: 8,
            ..Default::default()
        };
        assert_eq!(LMParams::<f32>::init(&cfg), LMParams::<f32>::init(&cfg));
        let other = LMConfig { seed: 1, ..cfg.clone() };
        assert_ne!(LMParams::<f32>::init(&cfg).data, LMParams::<f32>::init(&other).data);
    }
}
