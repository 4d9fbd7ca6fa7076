//! Pre-norm transformer block with adaptive scale/shift/gate conditioning.

use rand::Rng;

use super::layers::{
    attention_backward, attention_forward, gelu, gelu_grad, layer_norm, layer_norm_backward,
    linear_backward, linear_forward, linear_vec, modulate, modulate_backward, AttentionCache,
};
use super::params::{join, Linear, Params};
use crate::tensor::Tensor;

/// One block: `h += g₁·Attn(mod(LN h))`, then `h += g₂·MLP(mod(LN h))`, with
/// the six modulation vectors predicted from the conditioning vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DitBlock {
    pub modulation: Linear,
    pub qkv: Linear,
    pub proj: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    modv: Vec<f64>,
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a1: Vec<f64>,
    attn: AttentionCache,
    attn_out: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    a2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
    mlp_out: Vec<f64>,
}

impl DitBlock {
    /// Standard init with a zero modulation map, so the block starts as the
    /// identity.
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, mlp_ratio: usize, rng: &mut R) -> Self {
        Self {
            modulation: Linear::zeros(dim, 6 * dim),
            qkv: Linear::init(dim, 3 * dim, rng),
            proj: Linear::init(dim, dim, rng),
            fc1: Linear::init(dim, mlp_ratio * dim, rng),
            fc2: Linear::init(mlp_ratio * dim, dim, rng),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.qkv.input_dim()
    }

    /// `h` is `rows × dim`; `cond` is the conditioning vector of length `dim`.
    pub fn forward(&self, h: &[f64], rows: usize, cond: &[f64]) -> (Vec<f64>, BlockCache) {
        let d = self.dim();
        let hidden = self.fc1.output_dim();
        let modv = linear_vec(cond, &self.modulation);
        let (shift1, scale1, gate1) = (&modv[0..d], &modv[d..2 * d], &modv[2 * d..3 * d]);
        let (shift2, scale2, gate2) = (&modv[3 * d..4 * d], &modv[4 * d..5 * d], &modv[5 * d..6 * d]);

        let (xhat1, rstd1) = layer_norm(h, rows, d);
        let a1 = modulate(&xhat1, rows, d, shift1, scale1);
        let (attn_out, attn) = attention_forward(&a1, rows, d, self.heads, &self.qkv, &self.proj);
        let mut h1 = h.to_vec();
        for r in 0..rows {
            for c in 0..d {
                h1[r * d + c] += gate1[c] * attn_out[r * d + c];
            }
        }

        let (xhat2, rstd2) = layer_norm(&h1, rows, d);
        let a2 = modulate(&xhat2, rows, d, shift2, scale2);
        let pre_act = linear_forward(&a2, rows, &self.fc1);
        let act: Vec<f64> = pre_act.iter().map(|&v| gelu(v)).collect();
        let mlp_out = linear_forward(&act, rows, &self.fc2);
        let mut out = h1;
        for r in 0..rows {
            for c in 0..d {
                out[r * d + c] += gate2[c] * mlp_out[r * d + c];
            }
        }
        debug_assert_eq!(pre_act.len(), rows * hidden);
        let cache = BlockCache {
            modv,
            xhat1,
            rstd1,
            a1,
            attn,
            attn_out,
            xhat2,
            rstd2,
            a2,
            pre_act,
            act,
            mlp_out,
        };
        (out, cache)
    }

    /// Returns `(∂h, ∂cond)` and accumulates parameter gradients into `grad`.
    pub fn backward(
        &self,
        cache: &BlockCache,
        rows: usize,
        cond: &[f64],
        dout: &[f64],
        grad: &mut DitBlock,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let modv = &cache.modv;
        let scale1 = &modv[d..2 * d];
        let gate1 = &modv[2 * d..3 * d];
        let scale2 = &modv[4 * d..5 * d];
        let gate2 = &modv[5 * d..6 * d];
        let mut dmod = vec![0.0; 6 * d];

        // MLP half
        let mut d_mlp = vec![0.0; rows * d];
        for r in 0..rows {
            for c in 0..d {
                let i = r * d + c;
                dmod[5 * d + c] += dout[i] * cache.mlp_out[i];
                d_mlp[i] = dout[i] * gate2[c];
            }
        }
        let mut d_act = linear_backward(&cache.act, rows, &self.fc2, &d_mlp, &mut grad.fc2);
        for (g, &x) in d_act.iter_mut().zip(&cache.pre_act) {
            *g *= gelu_grad(x);
        }
        let d_a2 = linear_backward(&cache.a2, rows, &self.fc1, &d_act, &mut grad.fc1);
        let (dshift2, rest) = dmod[3 * d..].split_at_mut(d);
        let d_xhat2 = modulate_backward(&d_a2, &cache.xhat2, rows, d, scale2, dshift2, &mut rest[..d]);
        let mut dh1 = layer_norm_backward(&d_xhat2, &cache.xhat2, &cache.rstd2, rows, d);
        for (a, b) in dh1.iter_mut().zip(dout) {
            *a += b;
        }

        // attention half
        let mut d_attn = vec![0.0; rows * d];
        for r in 0..rows {
            for c in 0..d {
                let i = r * d + c;
                dmod[2 * d + c] += dh1[i] * cache.attn_out[i];
                d_attn[i] = dh1[i] * gate1[c];
            }
        }
        let d_a1 = attention_backward(
            &cache.a1,
            rows,
            d,
            self.heads,
            &self.qkv,
            &self.proj,
            &cache.attn,
            &d_attn,
            &mut grad.qkv,
            &mut grad.proj,
        );
        let (dshift1, rest) = dmod[..2 * d].split_at_mut(d);
        let d_xhat1 = modulate_backward(&d_a1, &cache.xhat1, rows, d, scale1, dshift1, rest);
        let mut dh = layer_norm_backward(&d_xhat1, &cache.xhat1, &cache.rstd1, rows, d);
        for (a, b) in dh.iter_mut().zip(&dh1) {
            *a += b;
        }

        let dcond = linear_backward(cond, 1, &self.modulation, &dmod, &mut grad.modulation);
        (dh, dcond)
    }
}

impl Params for DitBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.modulation.visit(&join(prefix, "modulation"), f);
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.modulation.visit_mut(&join(prefix, "modulation"), f);
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}
