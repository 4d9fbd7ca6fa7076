//! Turning rendered clips into latent training examples.

use crate::camera::{generate_plucker_rays, unshuffle_rays, CameraTrajectory, RAY_FACTOR};
use crate::codec::{prepare_condition, replicate_depth, DepthVideo, LatentCodec, LatentTensor, VideoTensor};
use crate::error::{Error, Result};
use crate::model::DualInput;

/// Everything the model sees for one clip, already in latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub cond_rgb: LatentTensor,
    pub cond_depth: LatentTensor,
    /// Unshuffled, time-grouped Plücker rays (`T′ × 384 × h × w`).
    pub ray_features: LatentTensor,
    pub z0_rgb: LatentTensor,
    pub z0_depth: LatentTensor,
    pub tag: usize,
}

impl TrainingExample {
    /// Model input at time `t` with the given noisy latents.
    pub fn input(&self, z_rgb: LatentTensor, z_depth: LatentTensor, t: f64) -> DualInput {
        DualInput {
            cond_rgb: self.cond_rgb.clone(),
            cond_depth: self.cond_depth.clone(),
            ray_features: self.ray_features.clone(),
            z_rgb,
            z_depth,
            t,
            tag: self.tag,
        }
    }
}

/// First frame of a depth video, normalized on its own.
pub fn first_depth_frame(depth: &DepthVideo) -> DepthVideo {
    let plane = depth.height * depth.width;
    DepthVideo {
        frames: 1,
        height: depth.height,
        width: depth.width,
        data: depth.data[..plane].to_vec(),
    }
}

/// Conditioning latents from a single RGB image and (optionally) its depth.
///
/// Each is encoded as a one-frame video and zero-padded to `frames` latent
/// frames. A missing image or depth gives an all-zero condition.
pub fn condition_latents(
    codec: &LatentCodec,
    image: Option<&VideoTensor>,
    depth: Option<&DepthVideo>,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<(LatentTensor, LatentTensor)> {
    let c = codec.channels();
    let f = crate::codec::SPATIAL_FACTOR;
    let zero = LatentTensor::zeros(frames, c, height / f, width / f);
    let rgb = match image {
        Some(img) => {
            if img.frames != 1 || img.height != height || img.width != width {
                return Err(Error::shape(format!(
                    "condition image must be one {height}x{width} frame, got {}x{}x{}",
                    img.frames, img.height, img.width
                )));
            }
            prepare_condition(&codec.encode(img)?, frames)?
        }
        None => zero.clone(),
    };
    let d = match depth {
        Some(dv) => prepare_condition(&codec.encode(&replicate_depth(&first_depth_frame(dv)))?, frames)?,
        None => zero,
    };
    Ok((rgb, d))
}

/// Ray features for a trajectory rendered at `height × width`.
pub fn ray_features(traj: &CameraTrajectory, height: usize, width: usize) -> Result<LatentTensor> {
    unshuffle_rays(&generate_plucker_rays(traj, height, width)?, RAY_FACTOR)
}

/// Encodes a full clip: targets, first-frame conditions and rays.
pub fn prepare_example(
    codec: &LatentCodec,
    rgb: &VideoTensor,
    depth: &DepthVideo,
    traj: &CameraTrajectory,
    tag: usize,
) -> Result<TrainingExample> {
    if depth.frames != rgb.frames || traj.frame_count() != rgb.frames {
        return Err(Error::shape(format!(
            "clip has {} RGB frames, {} depth frames and {} poses",
            rgb.frames,
            depth.frames,
            traj.frame_count()
        )));
    }
    if depth.height != rgb.height || depth.width != rgb.width {
        return Err(Error::shape("depth and RGB frame sizes differ"));
    }
    let z0_rgb = codec.encode(rgb)?;
    let z0_depth = codec.encode(&replicate_depth(depth))?;
    let first = rgb.frame(0);
    let (cond_rgb, cond_depth) = condition_latents(
        codec,
        Some(&first),
        Some(depth),
        z0_rgb.frames,
        rgb.height,
        rgb.width,
    )?;
    Ok(TrainingExample {
        cond_rgb,
        cond_depth,
        ray_features: ray_features(traj, rgb.height, rgb.width)?,
        z0_rgb,
        z0_depth,
        tag,
    })
}
