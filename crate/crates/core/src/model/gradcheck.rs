//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each check draws random parameters and inputs, contracts the output with
//! a fixed random tensor to get a scalar loss, and compares every analytic
//! partial derivative against `(L(θ+h) − L(θ−h)) / 2h`. The relative error is
//! `|a − n| / max(|a|, |n|, floor)`; the floor keeps derivatives that are zero
//! up to rounding from dominating the maximum.

use rand::SeedableRng;

use super::block::DitBlock;
use super::fusion::FusionBlock;
use super::params::Params;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-6;

/// Result of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, name: &str, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || !rel.is_finite() {
            self.max_rel_error = rel;
            self.worst = format!("{name}: analytic {analytic:.6e}, numeric {numeric:.6e}");
        }
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adds `delta` to the `index`-th scalar parameter in visit order.
pub fn nudge<P: Params>(p: &mut P, index: usize, delta: f64) {
    let mut offset = 0;
    p.visit_mut("", &mut |_, t| {
        if index >= offset && index < offset + t.len() {
            t.data_mut()[index - offset] += delta;
        }
        offset += t.len();
    });
}

/// Flattened parameter values and names (one name per scalar).
fn flat<P: Params>(p: &P) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, t| {
        for (i, &v) in t.data().iter().enumerate() {
            out.push((format!("{name}[{i}]"), v));
        }
    });
    out
}

fn randomize<P: Params>(p: &mut P, std: f64, rng: &mut rand_chacha::ChaCha8Rng) {
    p.visit_mut("", &mut |_, t| *t = Tensor::randn(t.shape(), std, rng));
}

/// Checks every parameter and input of a fusion block on a `2×2×2` grid
/// (8 tokens) with `dim` channels and `depth` stages.
pub fn check_fusion_block(seed: u64, dim: usize, depth: usize) -> GradCheckReport {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grid = (2, 2, 2);
    let rows = 8;
    let mut block = FusionBlock::init(dim, depth, &mut rng);
    randomize(&mut block, 0.5, &mut rng);
    let x = Tensor::randn(&[rows, dim], 1.0, &mut rng).into_vec();
    let w = Tensor::randn(&[rows, dim], 1.0, &mut rng).into_vec();
    let loss = |b: &FusionBlock, x: &[f64]| dot(&b.forward(x, grid).expect("shapes").0, &w);

    let (_, cache) = block.forward(&x, grid).expect("shapes");
    let mut grad = block.clone();
    grad.zero();
    let dx = block.backward(&x, grid, &cache, &w, &mut grad);

    let mut report = GradCheckReport::new();
    for (i, (name, g)) in flat(&grad).into_iter().enumerate() {
        let mut p = block.clone();
        nudge(&mut p, i, FD_STEP);
        let lp = loss(&p, &x);
        nudge(&mut p, i, -2.0 * FD_STEP);
        let lm = loss(&p, &x);
        report.record(&name, g, (lp - lm) / (2.0 * FD_STEP));
    }
    for (i, &g) in dx.iter().enumerate() {
        let mut xp = x.clone();
        xp[i] += FD_STEP;
        let lp = loss(&block, &xp);
        xp[i] -= 2.0 * FD_STEP;
        let lm = loss(&block, &xp);
        report.record(&format!("x[{i}]"), g, (lp - lm) / (2.0 * FD_STEP));
    }
    report
}

/// Checks every parameter, token input and conditioning input of one
/// transformer block on 8 tokens.
pub fn check_transformer_block(seed: u64, dim: usize, heads: usize) -> GradCheckReport {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rows = 8;
    let mut block = DitBlock::init(dim, heads, 4, &mut rng);
    randomize(&mut block, 0.3, &mut rng);
    let x = Tensor::randn(&[rows, dim], 1.0, &mut rng).into_vec();
    let cond = Tensor::randn(&[dim], 1.0, &mut rng).into_vec();
    let w = Tensor::randn(&[rows, dim], 1.0, &mut rng).into_vec();
    let loss = |b: &DitBlock, x: &[f64], c: &[f64]| dot(&b.forward(x, rows, c).0, &w);

    let (_, cache) = block.forward(&x, rows, &cond);
    let mut grad = block.clone();
    grad.zero();
    let (dx, dcond) = block.backward(&cache, rows, &cond, &w, &mut grad);

    let mut report = GradCheckReport::new();
    for (i, (name, g)) in flat(&grad).into_iter().enumerate() {
        let mut p = block.clone();
        nudge(&mut p, i, FD_STEP);
        let lp = loss(&p, &x, &cond);
        nudge(&mut p, i, -2.0 * FD_STEP);
        let lm = loss(&p, &x, &cond);
        report.record(&name, g, (lp - lm) / (2.0 * FD_STEP));
    }
    for (i, &g) in dx.iter().enumerate() {
        let mut xp = x.clone();
        xp[i] += FD_STEP;
        let lp = loss(&block, &xp, &cond);
        xp[i] -= 2.0 * FD_STEP;
        let lm = loss(&block, &xp, &cond);
        report.record(&format!("x[{i}]"), g, (lp - lm) / (2.0 * FD_STEP));
    }
    for (i, &g) in dcond.iter().enumerate() {
        let mut cp = cond.clone();
        cp[i] += FD_STEP;
        let lp = loss(&block, &x, &cp);
        cp[i] -= 2.0 * FD_STEP;
        let lm = loss(&block, &x, &cp);
        report.record(&format!("cond[{i}]"), g, (lp - lm) / (2.0 * FD_STEP));
    }
    report
}
