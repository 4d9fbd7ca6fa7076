//! Rectified-flow targets and the two-branch objective.

use crate::codec::LatentTensor;
use crate::error::{Error, Result};

/// A point on the straight path from data `z₀` (t = 0) to noise `ε` (t = 1)
/// together with the path velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub z_t: LatentTensor,
    pub v: LatentTensor,
}

/// `z_t = (1−t)·z₀ + t·ε` and `v = ε − z₀`.
pub fn flow_match_targets(z0: &LatentTensor, eps: &LatentTensor, t: f64) -> Result<FlowState> {
    if !z0.same_shape(eps) {
        return Err(Error::shape(format!(
            "data {:?} and noise {:?} differ in shape",
            z0.dims(),
            eps.dims()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} outside [0, 1]")));
    }
    let mut z_t = z0.zeros_like();
    let mut v = z0.zeros_like();
    for i in 0..z0.data.len() {
        z_t.data[i] = (1.0 - t) * z0.data[i] + t * eps.data[i];
        v.data[i] = eps.data[i] - z0.data[i];
    }
    Ok(FlowState { t, z_t, v })
}

/// Mean squared error over all elements.
pub fn mse(pred: &LatentTensor, target: &LatentTensor) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.data.len().max(1) as f64;
    Ok(pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Per-branch and combined losses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub rgb: f64,
    pub depth: f64,
    pub total: f64,
}

/// `L = L_rgb + λ·L_d`, each term a mean squared error.
pub fn loss_overall(
    v_rgb_hat: &LatentTensor,
    v_rgb: &LatentTensor,
    v_d_hat: &LatentTensor,
    v_d: &LatentTensor,
    lambda: f64,
) -> Result<Losses> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let rgb = mse(v_rgb_hat, v_rgb)?;
    let depth = mse(v_d_hat, v_d)?;
    Ok(Losses {
        rgb,
        depth,
        total: rgb + lambda * depth,
    })
}

/// `∂ mse / ∂ pred`, scaled by `weight`.
pub(crate) fn mse_grad(pred: &LatentTensor, target: &LatentTensor, weight: f64) -> LatentTensor {
    let scale = 2.0 * weight / pred.data.len().max(1) as f64;
    let mut g = pred.zeros_like();
    for (o, (a, b)) in g.data.iter_mut().zip(pred.data.iter().zip(&target.data)) {
        *o = scale * (a - b);
    }
    g
}
