//! Sampling a clip and decoding it to pixels.

use crate::codec::{LatentCodec, VideoKind, VideoTensor};
use crate::diffusion::{sample, ConditionedModel, SampleLatents, TimestepSchedule, TrainingExample};
use crate::error::Result;
use crate::model::DualDit;

#[derive(Clone, Debug)]
pub struct GeneratedVideo {
    pub latents: SampleLatents,
    pub rgb: VideoTensor,
    /// Decoded three-channel depth, absent for RGB-only models.
    pub depth: Option<VideoTensor>,
}

/// Samples with the conditions of `cond` (its clean latents are ignored)
/// and decodes both branches. Fusion is used whenever the model has it.
pub fn generate_video(
    model: &DualDit,
    codec: &LatentCodec,
    cond: &TrainingExample,
    schedule: &TimestepSchedule,
    seed: u64,
) -> Result<GeneratedVideo> {
    let velocity = ConditionedModel {
        model,
        cond_rgb: cond.cond_rgb.clone(),
        cond_depth: cond.cond_depth.clone(),
        ray_features: cond.ray_features.clone(),
        tag: cond.tag,
        gamma: model.has_fusion(),
    };
    let latents = sample(&velocity, schedule, cond.z0_rgb.dims(), model.depth.is_some(), seed)?;
    let rgb = codec.decode(&latents.rgb, VideoKind::Rgb)?;
    let depth = latents
        .depth
        .as_ref()
        .map(|d| codec.decode(d, VideoKind::Depth3))
        .transpose()?;
    Ok(GeneratedVideo { latents, rgb, depth })
}
