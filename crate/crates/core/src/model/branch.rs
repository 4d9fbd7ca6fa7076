//! One denoising branch: token embedding, timestep/descriptor conditioning,
//! a stack of blocks and an adaptive-norm output head.

use rand::Rng;

use super::block::{BlockCache, DitBlock};
use super::config::ModelConfig;
use super::layers::{
    layer_norm, layer_norm_backward, linear_backward, linear_forward, linear_vec, modulate,
    modulate_backward, positional_table, silu, silu_grad, sinusoid,
};
use super::params::{join, Linear, Params};
use crate::tensor::Tensor;

/// Timesteps in `[0, 1]` are scaled by this before the sinusoidal embedding.
pub const TIME_SCALE: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub input: Linear,
    /// `vocab × C` descriptor embeddings, added to every token.
    pub text: Tensor,
    pub time1: Linear,
    pub time2: Linear,
    pub blocks: Vec<DitBlock>,
    pub final_mod: Linear,
    pub head: Linear,
}

/// Saved values of the embedding stage.
#[derive(Clone, Debug)]
pub struct EmbedCache {
    tokens_in: Vec<f64>,
    t_sin: Vec<f64>,
    u1: Vec<f64>,
    s1: Vec<f64>,
    temb: Vec<f64>,
    /// Conditioning vector `silu(temb)` fed to every block.
    pub cond: Vec<f64>,
    tag: usize,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    input: Vec<f64>,
    modv: Vec<f64>,
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    y: Vec<f64>,
}

impl Branch {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.hidden;
        Self {
            input: Linear::init(2 * cfg.latent_channels, c, rng),
            text: Tensor::randn(&[cfg.vocab, c], 0.1, rng),
            time1: Linear::init(c, c, rng),
            time2: Linear::init(c, c, rng),
            blocks: (0..cfg.num_blocks)
                .map(|_| DitBlock::init(c, cfg.heads, cfg.mlp_ratio, rng))
                .collect(),
            final_mod: Linear::zeros(c, 2 * c),
            head: Linear::zeros(c, cfg.latent_channels),
        }
    }

    pub fn hidden(&self) -> usize {
        self.input.output_dim()
    }

    /// `tokens_in` is `L × 2C′`, tokens ordered `(t, y, x)` over `grid`.
    pub fn embed(&self, tokens_in: &[f64], grid: (usize, usize, usize), t: f64, tag: usize) -> (Vec<f64>, EmbedCache) {
        let rows = grid.0 * grid.1 * grid.2;
        let c = self.hidden();
        let mut h = linear_forward(tokens_in, rows, &self.input);
        let pos = positional_table(grid, c);
        let text = &self.text.data()[tag * c..(tag + 1) * c];
        for r in 0..rows {
            for j in 0..c {
                h[r * c + j] += pos[r * c + j] + text[j];
            }
        }
        let t_sin = sinusoid(t * TIME_SCALE, c);
        let u1 = linear_vec(&t_sin, &self.time1);
        let s1: Vec<f64> = u1.iter().map(|&v| silu(v)).collect();
        let temb = linear_vec(&s1, &self.time2);
        let cond: Vec<f64> = temb.iter().map(|&v| silu(v)).collect();
        (
            h,
            EmbedCache {
                tokens_in: tokens_in.to_vec(),
                t_sin,
                u1,
                s1,
                temb,
                cond,
                tag,
            },
        )
    }

    /// Accumulates embedding-stage gradients and returns `∂tokens_in`.
    pub fn embed_backward(
        &self,
        cache: &EmbedCache,
        rows: usize,
        dh: &[f64],
        dcond: &[f64],
        grad: &mut Branch,
    ) -> Vec<f64> {
        let c = self.hidden();
        let dtext = &mut grad.text.data_mut()[cache.tag * c..(cache.tag + 1) * c];
        for r in 0..rows {
            for (g, d) in dtext.iter_mut().zip(&dh[r * c..(r + 1) * c]) {
                *g += d;
            }
        }
        let dtemb: Vec<f64> = dcond
            .iter()
            .zip(&cache.temb)
            .map(|(d, &x)| d * silu_grad(x))
            .collect();
        let mut ds1 = linear_backward(&cache.s1, 1, &self.time2, &dtemb, &mut grad.time2);
        for (d, &x) in ds1.iter_mut().zip(&cache.u1) {
            *d *= silu_grad(x);
        }
        linear_backward(&cache.t_sin, 1, &self.time1, &ds1, &mut grad.time1);
        linear_backward(&cache.tokens_in, rows, &self.input, dh, &mut grad.input)
    }

    pub fn block_forward(&self, k: usize, h: &[f64], rows: usize, cond: &[f64]) -> (Vec<f64>, BlockCache) {
        self.blocks[k].forward(h, rows, cond)
    }

    /// Final adaptive norm and linear head: `L × C` → `L × C′`.
    pub fn head_forward(&self, h: &[f64], rows: usize, cond: &[f64]) -> (Vec<f64>, HeadCache) {
        let c = self.hidden();
        let modv = linear_vec(cond, &self.final_mod);
        let (xhat, rstd) = layer_norm(h, rows, c);
        let y = modulate(&xhat, rows, c, &modv[..c], &modv[c..]);
        let out = linear_forward(&y, rows, &self.head);
        (
            out,
            HeadCache {
                input: h.to_vec(),
                modv,
                xhat,
                rstd,
                y,
            },
        )
    }

    /// Returns `∂h`; adds the conditioning gradient into `dcond`.
    pub fn head_backward(
        &self,
        cache: &HeadCache,
        rows: usize,
        cond: &[f64],
        dout: &[f64],
        dcond: &mut [f64],
        grad: &mut Branch,
    ) -> Vec<f64> {
        let c = self.hidden();
        debug_assert_eq!(cache.input.len(), rows * c);
        let dy = linear_backward(&cache.y, rows, &self.head, dout, &mut grad.head);
        let mut dmod = vec![0.0; 2 * c];
        let (dshift, dscale) = dmod.split_at_mut(c);
        let dxhat = modulate_backward(&dy, &cache.xhat, rows, c, &cache.modv[c..], dshift, dscale);
        let dh = layer_norm_backward(&dxhat, &cache.xhat, &cache.rstd, rows, c);
        let dc = linear_backward(cond, 1, &self.final_mod, &dmod, &mut grad.final_mod);
        for (a, b) in dcond.iter_mut().zip(&dc) {
            *a += b;
        }
        dh
    }
}

impl Params for Branch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.input.visit(&join(prefix, "input"), f);
        f(join(prefix, "text"), &self.text);
        self.time1.visit(&join(prefix, "time1"), f);
        self.time2.visit(&join(prefix, "time2"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{}", i + 1)), f);
        }
        self.final_mod.visit(&join(prefix, "final_mod"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.input.visit_mut(&join(prefix, "input"), f);
        f(join(prefix, "text"), &mut self.text);
        self.time1.visit_mut(&join(prefix, "time1"), f);
        self.time2.visit_mut(&join(prefix, "time2"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{}", i + 1)), f);
        }
        self.final_mod.visit_mut(&join(prefix, "final_mod"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
