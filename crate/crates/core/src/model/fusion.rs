//! Spatiotemporal fusion block that carries one branch's features into the
//! other.
//!
//! Tokens `L × C` are viewed as a `C × T′ × h × w` volume. The block reduces
//! to `C/4` channels, runs `depth` stages of depthwise 3×3×3 then pointwise
//! 1×1×1 convolution (each followed by SiLU), restores `C` channels with a
//! zero-initialized 1×1×1 map and scales every frame by a gate
//! `g_t = σ(a·mean_t(bottleneck) + b)`.

use rand::Rng;

use super::layers::{linear_backward, linear_forward, silu, silu_grad};
use super::params::{join, Linear, Params};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

const TAPS: usize = 27;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionStage {
    /// `27 × C_b`, tap index `((dt+1)·3 + (dy+1))·3 + (dx+1)`.
    pub depthwise: Tensor,
    pub depthwise_bias: Tensor,
    pub pointwise: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    pub down: Linear,
    pub stages: Vec<FusionStage>,
    pub up: Linear,
    pub gate_w: Tensor,
    pub gate_b: Tensor,
}

#[derive(Clone, Debug)]
struct StageCache {
    input: Vec<f64>,
    conv: Vec<f64>,
    conv_act: Vec<f64>,
    point: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FusionCache {
    stages: Vec<StageCache>,
    features: Vec<f64>,
    restored: Vec<f64>,
    frame_means: Vec<f64>,
    gates: Vec<f64>,
}

impl FusionCache {
    /// Per-frame gate values `g_t`.
    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    /// Output before gating, `F(X)`.
    pub fn ungated(&self) -> &[f64] {
        &self.restored
    }
}

fn depthwise_conv(
    input: &[f64],
    grid: (usize, usize, usize),
    ch: usize,
    kernel: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (tt, hh, ww) = grid;
    let mut out = vec![0.0; input.len()];
    for t in 0..tt {
        for y in 0..hh {
            for x in 0..ww {
                let o = ((t * hh + y) * ww + x) * ch;
                out[o..o + ch].copy_from_slice(bias);
                for dt in 0..3 {
                    let st = t as isize + dt as isize - 1;
                    if st < 0 || st >= tt as isize {
                        continue;
                    }
                    for dy in 0..3 {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= hh as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let sx = x as isize + dx as isize - 1;
                            if sx < 0 || sx >= ww as isize {
                                continue;
                            }
                            let s = ((st as usize * hh + sy as usize) * ww + sx as usize) * ch;
                            let k = ((dt * 3 + dy) * 3 + dx) * ch;
                            for c in 0..ch {
                                out[o + c] += kernel[k + c] * input[s + c];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `∂input`; accumulates kernel and bias gradients.
fn depthwise_conv_backward(
    input: &[f64],
    grid: (usize, usize, usize),
    ch: usize,
    kernel: &[f64],
    dout: &[f64],
    dkernel: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let (tt, hh, ww) = grid;
    let mut din = vec![0.0; input.len()];
    for t in 0..tt {
        for y in 0..hh {
            for x in 0..ww {
                let o = ((t * hh + y) * ww + x) * ch;
                for c in 0..ch {
                    dbias[c] += dout[o + c];
                }
                for dt in 0..3 {
                    let st = t as isize + dt as isize - 1;
                    if st < 0 || st >= tt as isize {
                        continue;
                    }
                    for dy in 0..3 {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= hh as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let sx = x as isize + dx as isize - 1;
                            if sx < 0 || sx >= ww as isize {
                                continue;
                            }
                            let s = ((st as usize * hh + sy as usize) * ww + sx as usize) * ch;
                            let k = ((dt * 3 + dy) * 3 + dx) * ch;
                            for c in 0..ch {
                                dkernel[k + c] += dout[o + c] * input[s + c];
                                din[s + c] += kernel[k + c] * dout[o + c];
                            }
                        }
                    }
                }
            }
        }
    }
    din
}

impl FusionBlock {
    /// Fresh block: random inner maps, zero output map, zero gate affine.
    pub fn init<R: Rng + ?Sized>(dim: usize, depth: usize, rng: &mut R) -> Self {
        let cb = dim / 4;
        let stages = (0..depth)
            .map(|_| FusionStage {
                depthwise: Tensor::randn(&[TAPS, cb], 1.0 / (TAPS as f64).sqrt(), rng),
                depthwise_bias: Tensor::zeros(&[cb]),
                pointwise: Linear::init(cb, cb, rng),
            })
            .collect();
        Self {
            down: Linear::init(dim, cb, rng),
            stages,
            up: Linear::zeros(cb, dim),
            gate_w: Tensor::zeros(&[cb]),
            gate_b: Tensor::zeros(&[1]),
        }
    }

    pub fn dim(&self) -> usize {
        self.down.input_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.down.output_dim()
    }

    pub fn forward(&self, x: &[f64], grid: (usize, usize, usize)) -> Result<(Vec<f64>, FusionCache)> {
        let (tt, hh, ww) = grid;
        let rows = tt * hh * ww;
        let (c, cb) = (self.dim(), self.bottleneck());
        if x.len() != rows * c {
            return Err(Error::shape(format!(
                "fusion input has {} values, grid {grid:?} with {c} channels needs {}",
                x.len(),
                rows * c
            )));
        }
        let bottleneck = linear_forward(x, rows, &self.down);
        let mut cur = bottleneck.clone();
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            let conv = depthwise_conv(&cur, grid, cb, st.depthwise.data(), st.depthwise_bias.data());
            let conv_act: Vec<f64> = conv.iter().map(|&v| silu(v)).collect();
            let point = linear_forward(&conv_act, rows, &st.pointwise);
            let next: Vec<f64> = point.iter().map(|&v| silu(v)).collect();
            stage_caches.push(StageCache {
                input: cur,
                conv,
                conv_act,
                point,
            });
            cur = next;
        }
        let restored = linear_forward(&cur, rows, &self.up);

        let plane = hh * ww;
        let mut frame_means = vec![0.0; tt * cb];
        let mut gates = vec![0.0; tt];
        let mut y = vec![0.0; rows * c];
        for t in 0..tt {
            let m = &mut frame_means[t * cb..(t + 1) * cb];
            for r in t * plane..(t + 1) * plane {
                for (mi, b) in m.iter_mut().zip(&bottleneck[r * cb..(r + 1) * cb]) {
                    *mi += b;
                }
            }
            for mi in m.iter_mut() {
                *mi /= plane as f64;
            }
            let z = self.gate_b.data()[0] + m.iter().zip(self.gate_w.data()).map(|(a, b)| a * b).sum::<f64>();
            let g = sigmoid(z);
            gates[t] = g;
            for i in t * plane * c..(t + 1) * plane * c {
                y[i] = g * restored[i];
            }
        }
        Ok((
            y,
            FusionCache {
                stages: stage_caches,
                features: cur,
                restored,
                frame_means,
                gates,
            },
        ))
    }

    /// Returns `∂X`; accumulates parameter gradients into `grad`.
    pub fn backward(
        &self,
        x: &[f64],
        grid: (usize, usize, usize),
        cache: &FusionCache,
        dy: &[f64],
        grad: &mut FusionBlock,
    ) -> Vec<f64> {
        let (tt, hh, ww) = grid;
        let rows = tt * hh * ww;
        let (c, cb) = (self.dim(), self.bottleneck());
        let plane = hh * ww;

        let mut d_restored = vec![0.0; rows * c];
        let mut d_bottleneck = vec![0.0; rows * cb];
        for t in 0..tt {
            let g = cache.gates[t];
            let span = t * plane * c..(t + 1) * plane * c;
            let mut dg = 0.0;
            for i in span {
                dg += dy[i] * cache.restored[i];
                d_restored[i] = g * dy[i];
            }
            let dz = dg * g * (1.0 - g);
            grad.gate_b.data_mut()[0] += dz;
            let m = &cache.frame_means[t * cb..(t + 1) * cb];
            for (gw, mi) in grad.gate_w.data_mut().iter_mut().zip(m) {
                *gw += dz * mi;
            }
            let scale = dz / plane as f64;
            for r in t * plane..(t + 1) * plane {
                for (db, w) in d_bottleneck[r * cb..(r + 1) * cb].iter_mut().zip(self.gate_w.data()) {
                    *db += scale * w;
                }
            }
        }

        let mut dcur = linear_backward(&cache.features, rows, &self.up, &d_restored, &mut grad.up);
        for (k, st) in self.stages.iter().enumerate().rev() {
            let sc = &cache.stages[k];
            let gst = &mut grad.stages[k];
            for (d, &p) in dcur.iter_mut().zip(&sc.point) {
                *d *= silu_grad(p);
            }
            let mut d_act = linear_backward(&sc.conv_act, rows, &st.pointwise, &dcur, &mut gst.pointwise);
            for (d, &v) in d_act.iter_mut().zip(&sc.conv) {
                *d *= silu_grad(v);
            }
            dcur = depthwise_conv_backward(
                &sc.input,
                grid,
                cb,
                st.depthwise.data(),
                &d_act,
                gst.depthwise.data_mut(),
                gst.depthwise_bias.data_mut(),
            );
        }
        for (a, b) in d_bottleneck.iter_mut().zip(&dcur) {
            *a += b;
        }
        linear_backward(x, rows, &self.down, &d_bottleneck, &mut grad.down)
    }
}

impl Params for FusionBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.down.visit(&join(prefix, "down"), f);
        for (i, st) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            f(join(&p, "depthwise"), &st.depthwise);
            f(join(&p, "depthwise_bias"), &st.depthwise_bias);
            st.pointwise.visit(&join(&p, "pointwise"), f);
        }
        self.up.visit(&join(prefix, "up"), f);
        f(join(prefix, "gate_w"), &self.gate_w);
        f(join(prefix, "gate_b"), &self.gate_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.down.visit_mut(&join(prefix, "down"), f);
        for (i, st) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            f(join(&p, "depthwise"), &mut st.depthwise);
            f(join(&p, "depthwise_bias"), &mut st.depthwise_bias);
            st.pointwise.visit_mut(&join(&p, "pointwise"), f);
        }
        self.up.visit_mut(&join(prefix, "up"), f);
        f(join(prefix, "gate_w"), &mut self.gate_w);
        f(join(prefix, "gate_b"), &mut self.gate_b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn randomized(dim: usize, depth: usize, seed: u64) -> FusionBlock {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = FusionBlock::init(dim, depth, &mut rng);
        b.visit_mut("", &mut |_, t| {
            let r = Tensor::randn(t.shape(), 0.5, &mut rng);
            *t = r;
        });
        b
    }

    #[test]
    fn fresh_block_outputs_exact_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = FusionBlock::init(16, 2, &mut rng);
        let x = Tensor::randn(&[2 * 3 * 3, 16], 2.0, &mut rng);
        let (y, cache) = b.forward(x.data(), (2, 3, 3)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(cache.gates().iter().all(|&g| g == 0.5));
    }

    #[test]
    fn length_mismatch_is_a_shape_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = FusionBlock::init(8, 1, &mut rng);
        assert!(matches!(b.forward(&[0.0; 8 * 5], (1, 2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn saturated_gate_silences_output() {
        let mut b = randomized(8, 2, 11);
        b.gate_w.fill(0.0);
        b.gate_b.data_mut()[0] = -40.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[3 * 2 * 2, 8], 1.0, &mut rng);
        let (y, cache) = b.forward(x.data(), (3, 2, 2)).unwrap();
        let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nf: f64 = cache.ungated().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(nf > 0.0);
        assert!(ny < 1e-3 * nf);
    }

    #[test]
    fn receptive_field_of_two_stages() {
        // a single nonzero voxel influences the ungated output only within
        // a 5×5×5 window; gates are removed by comparing against a zero input
        let b = randomized(8, 2, 21);
        let grid = (7, 7, 7);
        let rows = 7 * 7 * 7;
        let zero = vec![0.0; rows * 8];
        let (_, base) = b.forward(&zero, grid).unwrap();
        let mut x = zero.clone();
        let centre = (3 * 7 + 3) * 7 + 3;
        for c in 0..8 {
            x[centre * 8 + c] = 1.0 + c as f64;
        }
        let (_, hit) = b.forward(&x, grid).unwrap();
        let mut touched = 0;
        for t in 0..7usize {
            for y in 0..7usize {
                for xx in 0..7usize {
                    let r = (t * 7 + y) * 7 + xx;
                    let changed = (0..8).any(|c| hit.ungated()[r * 8 + c] != base.ungated()[r * 8 + c]);
                    let inside = t.abs_diff(3) <= 2 && y.abs_diff(3) <= 2 && xx.abs_diff(3) <= 2;
                    if changed {
                        assert!(inside, "voxel ({t},{y},{xx}) changed outside the window");
                        touched += 1;
                    }
                }
            }
        }
        assert_eq!(touched, 125);
    }

    #[test]
    fn gates_stay_in_unit_interval() {
        let mut b = randomized(8, 1, 4);
        b.gate_w.scale(50.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x = Tensor::randn(&[4 * 2 * 2, 8], 10.0, &mut rng);
            let (_, cache) = b.forward(x.data(), (4, 2, 2)).unwrap();
            assert!(cache.gates().iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
    }
}
