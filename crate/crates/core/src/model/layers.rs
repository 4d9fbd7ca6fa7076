//! Forward and backward kernels on row-major token matrices.

use super::params::Linear;
use crate::tensor::{gemm, MatMut, MatRef};

pub const LN_EPS: f64 = 1e-6;

/// `x (rows × in) · W + b`.
pub fn linear_forward(x: &[f64], rows: usize, lin: &Linear) -> Vec<f64> {
    let (din, dout) = (lin.input_dim(), lin.output_dim());
    debug_assert_eq!(x.len(), rows * din);
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(lin.b.data());
    }
    gemm(
        1.0,
        MatRef::new(x, rows, din),
        MatRef::new(lin.w.data(), din, dout),
        1.0,
        MatMut::new(&mut y, rows, dout),
    );
    y
}

/// Accumulates `∂W, ∂b` into `grad` and returns `∂x`.
pub fn linear_backward(x: &[f64], rows: usize, lin: &Linear, dy: &[f64], grad: &mut Linear) -> Vec<f64> {
    let (din, dout) = (lin.input_dim(), lin.output_dim());
    gemm(
        1.0,
        MatRef::new(x, rows, din).t(),
        MatRef::new(dy, rows, dout),
        1.0,
        MatMut::new(grad.w.data_mut(), din, dout),
    );
    let db = grad.b.data_mut();
    for r in 0..rows {
        for (g, d) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *g += d;
        }
    }
    let mut dx = vec![0.0; rows * din];
    gemm(
        1.0,
        MatRef::new(dy, rows, dout),
        MatRef::new(lin.w.data(), din, dout).t(),
        0.0,
        MatMut::new(&mut dx, rows, din),
    );
    dx
}

/// Vector form of [`linear_forward`] for a single row.
pub fn linear_vec(x: &[f64], lin: &Linear) -> Vec<f64> {
    linear_forward(x, 1, lin)
}

/// Per-row normalization without affine parameters. Returns `(x̂, 1/σ)`.
pub fn layer_norm(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; rows * cols];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for (o, v) in xhat[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
    }
    (xhat, rstd)
}

pub fn layer_norm_backward(dxhat: &[f64], xhat: &[f64], rstd: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cols];
    let n = cols as f64;
    for r in 0..rows {
        let g = &dxhat[r * cols..(r + 1) * cols];
        let xh = &xhat[r * cols..(r + 1) * cols];
        let mean_g = g.iter().sum::<f64>() / n;
        let mean_gx = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        for ((o, gi), xi) in dx[r * cols..(r + 1) * cols].iter_mut().zip(g).zip(xh) {
            *o = rstd[r] * (gi - mean_g - xi * mean_gx);
        }
    }
    dx
}

/// `x̂ ⊙ (1 + scale) + shift`, with `scale`, `shift` broadcast over rows.
pub fn modulate(xhat: &[f64], rows: usize, cols: usize, shift: &[f64], scale: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = xhat[r * cols + c] * (1.0 + scale[c]) + shift[c];
        }
    }
    out
}

/// Backward of [`modulate`]: returns `∂x̂` and accumulates `∂shift`, `∂scale`.
pub fn modulate_backward(
    dout: &[f64],
    xhat: &[f64],
    rows: usize,
    cols: usize,
    scale: &[f64],
    dshift: &mut [f64],
    dscale: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            dshift[c] += dout[i];
            dscale[c] += dout[i] * xhat[i];
            dx[i] = dout[i] * (1.0 + scale[c]);
        }
    }
    dx
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn silu(x: f64) -> f64 {
    x * crate::tensor::sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = crate::tensor::sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of a scalar: `[sin(x·ω_i), cos(x·ω_i)]` with
/// `ω_i = 10000^{−i/half}`. Odd widths leave the last entry zero.
pub fn sinusoid(x: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (x * freq).sin();
        out[half + i] = (x * freq).cos();
    }
    out
}

/// Fixed 3D positional table (`L × dim`, tokens ordered `t, y, x`): each axis
/// gets `dim/6` sine/cosine pairs; leftover channels stay zero.
pub fn positional_table(grid: (usize, usize, usize), dim: usize) -> Vec<f64> {
    let (tt, hh, ww) = grid;
    let per_axis = dim / 6;
    let mut out = vec![0.0; tt * hh * ww * dim];
    let mut row = 0;
    for t in 0..tt {
        for y in 0..hh {
            for x in 0..ww {
                let base = row * dim;
                for (axis, coord) in [t, y, x].into_iter().enumerate() {
                    let emb = sinusoid(coord as f64, 2 * per_axis);
                    let off = base + axis * 2 * per_axis;
                    out[off..off + 2 * per_axis].copy_from_slice(&emb);
                }
                row += 1;
            }
        }
    }
    out
}

/// Saved tensors of a multi-head self-attention call.
#[derive(Clone, Debug)]
pub struct AttentionCache {
    pub qkv: Vec<f64>,
    /// Softmax probabilities, `heads × L × L`.
    pub probs: Vec<f64>,
    /// Concatenated head outputs, `L × C`.
    pub heads_out: Vec<f64>,
}

/// Multi-head self-attention over `rows` tokens of width `dim`.
pub fn attention_forward(
    x: &[f64],
    rows: usize,
    dim: usize,
    heads: usize,
    qkv_lin: &Linear,
    proj: &Linear,
) -> (Vec<f64>, AttentionCache) {
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qkv = linear_forward(x, rows, qkv_lin);
    let stride = 3 * dim;
    let mut probs = vec![0.0; heads * rows * rows];
    let mut heads_out = vec![0.0; rows * dim];
    for h in 0..heads {
        let p = &mut probs[h * rows * rows..(h + 1) * rows * rows];
        let q = MatRef::strided(&qkv[h * dh..], rows, dh, stride);
        let k = MatRef::strided(&qkv[dim + h * dh..], rows, dh, stride);
        gemm(scale, q, k.t(), 0.0, MatMut::new(p, rows, rows));
        for r in 0..rows {
            let row = &mut p[r * rows..(r + 1) * rows];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let inv = 1.0 / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let v = MatRef::strided(&qkv[2 * dim + h * dh..], rows, dh, stride);
        gemm(
            1.0,
            MatRef::new(p, rows, rows),
            v,
            0.0,
            MatMut::strided(&mut heads_out[h * dh..], rows, dh, dim),
        );
    }
    let out = linear_forward(&heads_out, rows, proj);
    (
        out,
        AttentionCache {
            qkv,
            probs,
            heads_out,
        },
    )
}

/// Backward of [`attention_forward`]; accumulates parameter gradients and
/// returns `∂x`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    x: &[f64],
    rows: usize,
    dim: usize,
    heads: usize,
    qkv_lin: &Linear,
    proj: &Linear,
    cache: &AttentionCache,
    dout: &[f64],
    g_qkv: &mut Linear,
    g_proj: &mut Linear,
) -> Vec<f64> {
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let stride = 3 * dim;
    let d_heads = linear_backward(&cache.heads_out, rows, proj, dout, g_proj);
    let mut dqkv = vec![0.0; rows * stride];
    let mut dp = vec![0.0; rows * rows];
    for h in 0..heads {
        let p = &cache.probs[h * rows * rows..(h + 1) * rows * rows];
        let d_o = MatRef::strided(&d_heads[h * dh..], rows, dh, dim);
        let v = MatRef::strided(&cache.qkv[2 * dim + h * dh..], rows, dh, stride);
        // dP = dO · Vᵀ, dV = Pᵀ · dO
        gemm(1.0, d_o, v.t(), 0.0, MatMut::new(&mut dp, rows, rows));
        gemm(
            1.0,
            MatRef::new(p, rows, rows).t(),
            d_o,
            0.0,
            MatMut::strided(&mut dqkv[2 * dim + h * dh..], rows, dh, stride),
        );
        // softmax backward in place: dS = P ⊙ (dP − rowsum(dP ⊙ P))
        for r in 0..rows {
            let pr = &p[r * rows..(r + 1) * rows];
            let dr = &mut dp[r * rows..(r + 1) * rows];
            let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
            for (d, pv) in dr.iter_mut().zip(pr) {
                *d = pv * (*d - dot);
            }
        }
        let q = MatRef::strided(&cache.qkv[h * dh..], rows, dh, stride);
        let k = MatRef::strided(&cache.qkv[dim + h * dh..], rows, dh, stride);
        gemm(
            scale,
            MatRef::new(&dp, rows, rows),
            k,
            0.0,
            MatMut::strided(&mut dqkv[h * dh..], rows, dh, stride),
        );
        gemm(
            scale,
            MatRef::new(&dp, rows, rows).t(),
            q,
            0.0,
            MatMut::strided(&mut dqkv[dim + h * dh..], rows, dh, stride),
        );
    }
    linear_backward(x, rows, qkv_lin, &dqkv, g_qkv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn num_grad(f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
        (f(x + 1e-5) - f(x - 1e-5)) / 2e-5
    }

    #[test]
    fn activation_derivatives() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((gelu_grad(x) - num_grad(&gelu, x)).abs() < 1e-8);
            assert!((silu_grad(x) - num_grad(&silu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = vec![1.0, 2.0, 3.0, 4.0, -1.0, -1.0, 5.0, 9.0];
        let (xh, _) = layer_norm(&x, 2, 4);
        for r in 0..2 {
            let row = &xh[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = crate::tensor::Tensor::randn(&[5, 8], 1.0, &mut rng);
        let qkv = Linear::init(8, 24, &mut rng);
        let proj = Linear::init(8, 8, &mut rng);
        let (_, cache) = attention_forward(x.data(), 5, 8, 2, &qkv, &proj);
        for row in cache.probs.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn positional_table_varies_per_token() {
        let tab = positional_table((2, 2, 2), 12);
        assert_eq!(tab.len(), 8 * 12);
        for a in 0..8 {
            for b in (a + 1)..8 {
                assert_ne!(&tab[a * 12..(a + 1) * 12], &tab[b * 12..(b + 1) * 12]);
            }
        }
    }
}
