//! Forward and backward kernels on row-major `[rows, width]` activations.

use crate::scalar::{gemm, Mat, Scalar};

pub const LN_EPS: f64 = 1e-5;

/// `out = inp · w + b` for `inp [m,k]`, `w [k,n]`.
pub fn linear_forward<T: Scalar>(out: &mut [T], inp: &[T], w: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for row in out[..m * n].chunks_exact_mut(n) {
        row.copy_from_slice(&b[..n]);
    }
    gemm(T::one(), inp, Mat::rm(m, k), w, Mat::rm(k, n), T::one(), out, Mat::rm(m, n));
}

/// Accumulates `dinp += dout · wᵀ`, `dw += inpᵀ · dout`, `db += Σ_rows dout`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    dinp: &mut [T],
    dw: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    w: &[T],
    m: usize,
    k: usize,
    n: usize,
) {
    gemm(T::one(), dout, Mat::rm(m, n), w, Mat::rm(k, n).t(), T::one(), dinp, Mat::rm(m, k));
    gemm(T::one(), inp, Mat::rm(m, k).t(), dout, Mat::rm(m, n), T::one(), dw, Mat::rm(k, n));
    for row in dout[..m * n].chunks_exact(n) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_forward<T: Scalar>(
    out: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    inp: &[T],
    g: &[T],
    b: &[T],
    m: usize,
    d: usize,
) {
    let eps = T::of(LN_EPS);
    let dn = T::of(d as f64);
    for r in 0..m {
        let x = &inp[r * d..(r + 1) * d];
        let mu = x.iter().copied().sum::<T>() / dn;
        let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        let o = &mut out[r * d..(r + 1) * d];
        for i in 0..d {
            o[i] = (x[i] - mu) * rs * g[i] + b[i];
        }
        mean[r] = mu;
        rstd[r] = rs;
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward<T: Scalar>(
    dinp: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    dout: &[T],
    inp: &[T],
    g: &[T],
    mean: &[T],
    rstd: &[T],
    m: usize,
    d: usize,
) {
    let dn = T::of(d as f64);
    for r in 0..m {
        let x = &inp[r * d..(r + 1) * d];
        let dy = &dout[r * d..(r + 1) * d];
        let (mu, rs) = (mean[r], rstd[r]);
        let mut dnorm_mean = T::zero();
        let mut dnorm_norm_mean = T::zero();
        for i in 0..d {
            let norm = (x[i] - mu) * rs;
            let dnorm = g[i] * dy[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= dn;
        dnorm_norm_mean /= dn;
        let dx = &mut dinp[r * d..(r + 1) * d];
        for i in 0..d {
            let norm = (x[i] - mu) * rs;
            db[i] += dy[i];
            dg[i] += norm * dy[i];
            let dnorm = g[i] * dy[i];
            dx[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rs;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu_forward<T: Scalar>(out: &mut [T], inp: &[T]) {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let half = T::of(0.5);
    for (o, &x) in out.iter_mut().zip(inp) {
        let cube = k * x * x * x;
        *o = half * x * (T::one() + (c * (x + cube)).tanh());
    }
}

/// Accumulates `dinp += gelu'(inp) * dout`.
pub fn gelu_backward<T: Scalar>(dinp: &mut [T], inp: &[T], dout: &[T]) {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let three = T::of(3.0);
    for ((dx, &x), &dy) in dinp.iter_mut().zip(inp).zip(dout) {
        let u = c * (x + k * x * x * x);
        let th = u.tanh();
        let sech2 = T::one() - th * th;
        let local = half * (T::one() + th) + half * x * sech2 * c * (T::one() + three * k * x * x);
        *dx += local * dy;
    }
}

/// Shape of a batched causal self-attention call.
#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub width: usize,
}

impl AttnShape {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Causal multi-head attention.
///
/// `qkv [B*T, 3D]` holds queries, keys and values side by side; `att
/// [B, H, T, T]` receives the attention probabilities (zero above the
/// diagonal) and `out [B*T, D]` the per-head outputs concatenated.
pub fn attention_forward<T: Scalar>(out: &mut [T], att: &mut [T], qkv: &[T], s: AttnShape) {
    let (t, d, hs) = (s.seq, s.width, s.head_dim());
    let scale = T::of(1.0 / (hs as f64).sqrt());
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = b * t * 3 * d;
            let q = &qkv[base + h * hs..];
            let k = &qkv[base + d + h * hs..];
            let v = &qkv[base + 2 * d + h * hs..];
            let a = &mut att[(b * s.heads + h) * t * t..(b * s.heads + h + 1) * t * t];
            gemm(scale, q, Mat::strided(t, hs, 3 * d), k, Mat::strided(t, hs, 3 * d).t(), T::zero(), a, Mat::rm(t, t));
            for i in 0..t {
                causal_softmax_row(&mut a[i * t..(i + 1) * t], i);
            }
            let o = &mut out[b * t * d + h * hs..];
            gemm(T::one(), a, Mat::rm(t, t), v, Mat::strided(t, hs, 3 * d), T::zero(), o, Mat::strided(t, hs, d));
        }
    }
}

/// Softmax over `row[..=last]`; entries after `last` are set to zero.
pub fn causal_softmax_row<T: Scalar>(row: &mut [T], last: usize) {
    let live = &mut row[..=last];
    let max = live.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in live.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    for x in live.iter_mut() {
        *x *= inv;
    }
    for x in row[last + 1..].iter_mut() {
        *x = T::zero();
    }
}

/// Backward of [`attention_forward`]. Accumulates into `dqkv`; `scratch`
/// needs `T*T` elements.
pub fn attention_backward<T: Scalar>(
    dqkv: &mut [T],
    scratch: &mut [T],
    dout: &[T],
    qkv: &[T],
    att: &[T],
    s: AttnShape,
) {
    let (t, d, hs) = (s.seq, s.width, s.head_dim());
    let scale = T::of(1.0 / (hs as f64).sqrt());
    let dp = &mut scratch[..t * t];
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = b * t * 3 * d;
            let a = &att[(b * s.heads + h) * t * t..(b * s.heads + h + 1) * t * t];
            let dy = &dout[b * t * d + h * hs..];
            let v = &qkv[base + 2 * d + h * hs..];
            // dP = dY · Vᵀ
            gemm(T::one(), dy, Mat::strided(t, hs, d), v, Mat::strided(t, hs, 3 * d).t(), T::zero(), dp, Mat::rm(t, t));
            // dV += Pᵀ · dY
            gemm(
                T::one(),
                a,
                Mat::rm(t, t).t(),
                dy,
                Mat::strided(t, hs, d),
                T::one(),
                &mut dqkv[base + 2 * d + h * hs..],
                Mat::strided(t, hs, 3 * d),
            );
            // dS = P ⊙ (dP − rowsum(P ⊙ dP)), scaled.
            for i in 0..t {
                let pr = &a[i * t..(i + 1) * t];
                let dr = &mut dp[i * t..(i + 1) * t];
                let dot: T = pr[..=i].iter().zip(&dr[..=i]).map(|(&p, &g)| p * g).sum();
                for j in 0..=i {
                    dr[j] = pr[j] * (dr[j] - dot) * scale;
                }
                for x in dr[i + 1..].iter_mut() {
                    *x = T::zero();
                }
            }
            let q = &qkv[base + h * hs..];
            let k = &qkv[base + d + h * hs..];
            // dQ += dS · K
            gemm(
                T::one(),
                dp,
                Mat::rm(t, t),
                k,
                Mat::strided(t, hs, 3 * d),
                T::one(),
                &mut dqkv[base + h * hs..],
                Mat::strided(t, hs, 3 * d),
            );
            // dK += dSᵀ · Q
            gemm(
                T::one(),
                dp,
                Mat::rm(t, t).t(),
                q,
                Mat::strided(t, hs, 3 * d),
                T::one(),
                &mut dqkv[base + d + h * hs..],
                Mat::strided(t, hs, 3 * d),
            );
        }
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows<T: Scalar>(x: &mut [T], width: usize) {
    for row in x.chunks_exact_mut(width) {
        causal_softmax_row(row, width - 1);
    }
}

/// Log-softmax value of `row[target]`.
pub fn log_prob<T: Scalar>(row: &[T], target: usize) -> f64 {
    let max = row.iter().map(|x| x.f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x.f64() - max).exp()).sum::<f64>().ln() + max;
    row[target].f64() - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one_and_mask() {
        let mut row = vec![1.0f64, 2.0, 3.0, 100.0];
        causal_softmax_row(&mut row, 2);
        assert!((row[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row[3], 0.0);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        let xs = [-3.0f64, -1.0, -0.1, 0.0, 0.3, 2.0];
        let mut dx = vec![0.0; xs.len()];
        gelu_backward(&mut dx, &xs, &[1.0; 6]);
        for (i, &x) in xs.iter().enumerate() {
            let h = 1e-6;
            let mut p = [0.0];
            let mut m = [0.0];
            gelu_forward(&mut p, &[x + h]);
            gelu_forward(&mut m, &[x - h]);
            assert!(((p[0] - m[0]) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn log_prob_is_normalized() {
        let row = [0.5f64, -1.0, 2.0];
        let total: f64 = (0..3).map(|i| log_prob(&row, i).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
