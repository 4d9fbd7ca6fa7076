//! Euler integration of the learned velocity field from noise to data.

use super::schedule::TimestepSchedule;
use crate::codec::LatentTensor;
use crate::error::{Error, Result};
use crate::model::{DualDit, DualInput};
use crate::rng;

const TAG_SAMPLE: u64 = 0x5A4D;

/// Latents of both branches; the depth latent is absent for RGB-only models.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLatents {
    pub rgb: LatentTensor,
    pub depth: Option<LatentTensor>,
}

/// A velocity field `v̂(z, t)` over both branches.
pub trait VelocityModel {
    fn velocity(&self, z: &SampleLatents, t: f64) -> Result<SampleLatents>;
}

/// A trained model together with fixed conditions.
pub struct ConditionedModel<'a> {
    pub model: &'a DualDit,
    pub cond_rgb: LatentTensor,
    pub cond_depth: LatentTensor,
    pub ray_features: LatentTensor,
    pub tag: usize,
    pub gamma: bool,
}

impl VelocityModel for ConditionedModel<'_> {
    fn velocity(&self, z: &SampleLatents, t: f64) -> Result<SampleLatents> {
        let input = DualInput {
            cond_rgb: self.cond_rgb.clone(),
            cond_depth: self.cond_depth.clone(),
            ray_features: self.ray_features.clone(),
            z_rgb: z.rgb.clone(),
            z_depth: z.depth.clone().unwrap_or_else(|| z.rgb.zeros_like()),
            t,
            tag: self.tag,
        };
        let (out, _) = self.model.forward(&input, self.gamma)?;
        Ok(SampleLatents {
            rgb: out.v_rgb,
            depth: out.v_depth,
        })
    }
}

/// Returns the straight-path velocity `ε − z₀` everywhere.
pub struct ConstantVelocity {
    pub velocity: SampleLatents,
}

impl ConstantVelocity {
    pub fn linear_path(z0: &SampleLatents, eps: &SampleLatents) -> Self {
        let diff = |e: &LatentTensor, z: &LatentTensor| {
            let mut v = e.clone();
            for (a, b) in v.data.iter_mut().zip(&z.data) {
                *a -= b;
            }
            v
        };
        let depth = match (&eps.depth, &z0.depth) {
            (Some(e), Some(z)) => Some(diff(e, z)),
            _ => None,
        };
        Self {
            velocity: SampleLatents {
                rgb: diff(&eps.rgb, &z0.rgb),
                depth,
            },
        }
    }
}

impl VelocityModel for ConstantVelocity {
    fn velocity(&self, _z: &SampleLatents, _t: f64) -> Result<SampleLatents> {
        Ok(self.velocity.clone())
    }
}

/// Unit Gaussian starting latents for `seed`.
pub fn initial_noise(dims: (usize, usize, usize, usize), with_depth: bool, seed: u64) -> SampleLatents {
    let mut r = rng::stream(seed, &[TAG_SAMPLE]);
    let (f, c, h, w) = dims;
    let rgb = LatentTensor::randn(f, c, h, w, &mut r);
    let depth = with_depth.then(|| LatentTensor::randn(f, c, h, w, &mut r));
    SampleLatents { rgb, depth }
}

fn euler(z: &mut LatentTensor, v: &LatentTensor, dt: f64) -> Result<()> {
    if !z.same_shape(v) {
        return Err(Error::shape(format!("velocity {:?} vs latent {:?}", v.dims(), z.dims())));
    }
    for (a, b) in z.data.iter_mut().zip(&v.data) {
        *a -= dt * b;
    }
    Ok(())
}

/// Integrates from `start` along `schedule`; the last step goes to `t = 0`.
pub fn sample_from<M: VelocityModel + ?Sized>(
    model: &M,
    schedule: &TimestepSchedule,
    start: SampleLatents,
) -> Result<SampleLatents> {
    let ts = schedule.timesteps();
    let mut z = start;
    for (k, &t) in ts.iter().enumerate() {
        let next = ts.get(k + 1).copied().unwrap_or(0.0);
        let v = model.velocity(&z, t)?;
        let dt = t - next;
        euler(&mut z.rgb, &v.rgb, dt)?;
        match (&mut z.depth, &v.depth) {
            (Some(zd), Some(vd)) => euler(zd, vd, dt)?,
            (None, _) => {}
            (Some(_), None) => return Err(Error::shape("model returned no depth velocity")),
        }
        let finite = z.rgb.all_finite() && z.depth.as_ref().is_none_or(|d| d.all_finite());
        if !finite {
            return Err(Error::Numeric(format!("non-finite latents after sampling step {k} (t = {t})")));
        }
    }
    Ok(z)
}

/// Draws the starting noise from `seed` and integrates.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    schedule: &TimestepSchedule,
    dims: (usize, usize, usize, usize),
    with_depth: bool,
    seed: u64,
) -> Result<SampleLatents> {
    sample_from(model, schedule, initial_noise(dims, with_depth, seed))
}
