//! Per-layer activations of a forward pass, paired with probe targets.

use super::cka::{linear_cka, FeatureMatrix};
use crate::codec::LatentTensor;
use crate::diffusion::{flow_match_targets, TrainingExample};
use crate::error::Result;
use crate::model::DualDit;
use crate::rng;

const TAG_PROBE: u64 = 0x960BE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeTarget {
    /// Projected Plücker rays at latent resolution.
    RayLatent,
    /// The clean depth latent of the clip.
    DepthLatent,
}

impl ProbeTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTarget::RayLatent => "ray",
            ProbeTarget::DepthLatent => "depth_latent",
        }
    }
}

/// Token matrices (rows = `(t, y, x)` positions) of one forward pass.
#[derive(Clone, Debug)]
pub struct LayerProbe {
    /// Output of each RGB block, `L × C`.
    pub rgb: Vec<FeatureMatrix>,
    /// Output of each depth block; empty for RGB-only models.
    pub depth: Vec<FeatureMatrix>,
    pub ray_latent: FeatureMatrix,
    pub depth_latent: FeatureMatrix,
}

impl LayerProbe {
    pub fn target(&self, t: ProbeTarget) -> &FeatureMatrix {
        match t {
            ProbeTarget::RayLatent => &self.ray_latent,
            ProbeTarget::DepthLatent => &self.depth_latent,
        }
    }
}

/// `L × C′` token matrix of a latent.
pub fn token_matrix(latent: &LatentTensor) -> Result<FeatureMatrix> {
    FeatureMatrix::new(latent.num_tokens(), latent.channels, latent.to_tokens())
}

/// Runs the model on the clip noised to time `t` (noise fixed by `seed`)
/// and collects every block output.
pub fn probe_activations(
    model: &DualDit,
    example: &TrainingExample,
    t: f64,
    seed: u64,
    gamma: bool,
) -> Result<LayerProbe> {
    let mut r = rng::stream(seed, &[TAG_PROBE]);
    let (f, c, h, w) = example.z0_rgb.dims();
    let eps_rgb = LatentTensor::randn(f, c, h, w, &mut r);
    let eps_d = LatentTensor::randn(f, c, h, w, &mut r);
    let rgb = flow_match_targets(&example.z0_rgb, &eps_rgb, t)?;
    let depth = flow_match_targets(&example.z0_depth, &eps_d, t)?;
    let (_, cache) = model.forward(&example.input(rgb.z_t, depth.z_t, t), gamma)?;
    let rows = example.z0_rgb.num_tokens();
    let hidden = model.config.hidden;
    let wrap = |layers: &[Vec<f64>]| -> Result<Vec<FeatureMatrix>> {
        layers.iter().map(|l| FeatureMatrix::new(rows, hidden, l.clone())).collect()
    };
    Ok(LayerProbe {
        rgb: wrap(&cache.rgb_layers)?,
        depth: wrap(&cache.depth_layers)?,
        ray_latent: token_matrix(cache.ray_latent())?,
        depth_latent: token_matrix(&example.z0_depth)?,
    })
}

/// CKA of every layer against one target.
pub fn layer_cka(layers: &[FeatureMatrix], target: &FeatureMatrix) -> Result<Vec<f64>> {
    layers.iter().map(|l| linear_cka(l, target)).collect()
}
