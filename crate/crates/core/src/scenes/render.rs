//! Primary-ray renderer producing RGB and camera-frame depth.

use nalgebra::Vector3;

use super::geometry::{Hit, Primitive};
use crate::camera::{CameraTrajectory, Pose};
use crate::codec::{DepthVideo, VideoKind, VideoTensor};
use crate::error::{Error, Result};

/// Depth assigned to pixels whose ray hits nothing.
pub const FAR_PLANE: f64 = 20.0;
/// Fraction of albedo lit regardless of orientation.
pub const AMBIENT: f64 = 0.25;
const T_MIN: f64 = 1e-9;

/// Descriptor vocabulary used for text conditioning.
pub const DESCRIPTORS: [&str; 4] = ["room", "courtyard", "gallery", "corridor"];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    /// Direction towards the light (normalized on use).
    pub light: Vector3<f64>,
    /// Linear colour in `[0, 1]`.
    pub background: [f64; 3],
    pub tag: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidInput("scene needs at least one primitive".into()));
        }
        for p in &self.primitives {
            p.validate()?;
        }
        if !self.light.iter().all(|v| v.is_finite()) || self.light.norm() == 0.0 {
            return Err(Error::InvalidInput("light direction must be finite and non-zero".into()));
        }
        if self.tag >= DESCRIPTORS.len() {
            return Err(Error::InvalidInput(format!("descriptor tag {} out of range", self.tag)));
        }
        Ok(())
    }

    /// The scene moved by a rigid transform.
    pub fn transformed(&self, g: &Pose) -> Self {
        Self {
            primitives: self.primitives.iter().map(|p| p.transformed(g)).collect(),
            light: g.rotation() * self.light,
            background: self.background,
            tag: self.tag,
        }
    }

    /// Nearest hit over all primitives.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(origin, dir, T_MIN))
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedClip {
    /// RGB in `[−1, 1]`.
    pub rgb: VideoTensor,
    /// Camera-frame z of the nearest hit, [`FAR_PLANE`] on misses.
    pub depth: DepthVideo,
    pub trajectory: CameraTrajectory,
    pub tag: usize,
}

/// Renders every pose of `traj` at `height × width`. Pixel `(i, j)` uses the
/// same integer-corner convention as the Plücker rays.
pub fn render_clip(scene: &SceneSpec, traj: &CameraTrajectory, height: usize, width: usize) -> Result<RenderedClip> {
    scene.validate()?;
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("render size must be positive".into()));
    }
    let frames = traj.frame_count();
    let light = scene.light.normalize();
    let mut rgb = VideoTensor::zeros(frames, height, width, VideoKind::Rgb);
    let mut depth = DepthVideo {
        frames,
        height,
        width,
        data: vec![FAR_PLANE; frames * height * width],
    };
    let plane = height * width;
    for (t, pose) in traj.poses().iter().enumerate() {
        let k = traj.intrinsics_at(t);
        let r = pose.rotation();
        let origin = *pose.translation();
        for j in 0..height {
            for i in 0..width {
                let d_cam = k.pixel_direction(i as f64, j as f64);
                let dir = r * d_cam;
                let (color, z) = match scene.trace(&origin, &dir) {
                    Some(hit) => {
                        let lambert = hit.normal.dot(&light).max(0.0);
                        let s = AMBIENT + (1.0 - AMBIENT) * lambert;
                        (hit.albedo.map(|a| (a * s).clamp(0.0, 1.0)), hit.distance * d_cam.z)
                    }
                    None => (scene.background, FAR_PLANE),
                };
                for (c, v) in color.iter().enumerate() {
                    let idx = rgb.index(t, c, j, i);
                    rgb.data[idx] = 2.0 * v - 1.0;
                }
                depth.data[t * plane + j * width + i] = z;
            }
        }
    }
    Ok(RenderedClip {
        rgb,
        depth,
        trajectory: traj.clone(),
        tag: scene.tag,
    })
}
