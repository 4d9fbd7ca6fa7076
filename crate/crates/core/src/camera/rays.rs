//! Per-pixel Plücker rays and their conversion to latent resolution.

use nalgebra::Vector3;

use super::pose::CameraTrajectory;
use crate::codec::{latent_frames, LatentTensor, TEMPORAL_GROUP};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef};

/// Downsampling factor that matches the latent codec.
pub const RAY_FACTOR: usize = 8;

/// Ray latents share the latent tensor layout `T′×C′×h×w`.
pub type RayLatent = LatentTensor;

/// `T×H×W×6` Plücker coordinates, channels ordered `[m, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RayField {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl RayField {
    #[inline]
    fn offset(&self, t: usize, j: usize, i: usize) -> usize {
        ((t * self.height + j) * self.width + i) * 6
    }

    /// `(m, d)` at frame `t`, row `j`, column `i`.
    pub fn ray(&self, t: usize, j: usize, i: usize) -> (Vector3<f64>, Vector3<f64>) {
        let o = self.offset(t, j, i);
        let s = &self.data[o..o + 6];
        (Vector3::new(s[0], s[1], s[2]), Vector3::new(s[3], s[4], s[5]))
    }
}

/// Plücker rays for every pixel of every frame.
///
/// Pixel `(i, j)` (column, row, integer corner coordinates) has camera-frame
/// direction `normalize([(i − cx)/fx, (j − cy)/fy, 1])`; the world direction is
/// `d = R·d_cam` and the moment is `m = t × d`.
pub fn generate_plucker_rays(
    traj: &CameraTrajectory,
    height: usize,
    width: usize,
) -> Result<RayField> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("ray field needs H, W >= 1".into()));
    }
    let frames = traj.frame_count();
    let mut field = RayField {
        frames,
        height,
        width,
        data: vec![0.0; frames * height * width * 6],
    };
    for (t, pose) in traj.poses().iter().enumerate() {
        let k = traj.intrinsics_at(t);
        if !k.is_finite() || k.fx <= 0.0 || k.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "frame {t}: intrinsics must be finite with positive focal lengths"
            )));
        }
        let r = pose.rotation();
        let o = pose.translation();
        for j in 0..height {
            for i in 0..width {
                let d = r * k.pixel_direction(i as f64, j as f64);
                let m = o.cross(&d);
                let off = field.offset(t, j, i);
                field.data[off..off + 6].copy_from_slice(&[m.x, m.y, m.z, d.x, d.y, d.z]);
            }
        }
    }
    Ok(field)
}

/// Space-to-channel rearrangement by `factor` followed by temporal grouping
/// (frame 0 alone, then means over groups of four frames).
///
/// Returns a `T′ × (6·factor²) × (H/factor) × (W/factor)` tensor; channel
/// `c·factor² + dy·factor + dx` holds ray channel `c` at sub-pixel `(dy, dx)`.
pub fn unshuffle_rays(rays: &RayField, factor: usize) -> Result<LatentTensor> {
    if factor == 0 || !rays.height.is_multiple_of(factor) || !rays.width.is_multiple_of(factor) {
        return Err(Error::shape(format!(
            "ray field {}x{} not divisible by factor {factor}",
            rays.height, rays.width
        )));
    }
    let tp = latent_frames(rays.frames)?;
    let (h, w) = (rays.height / factor, rays.width / factor);
    let channels = 6 * factor * factor;
    let mut out = LatentTensor::zeros(tp, channels, h, w);
    for g in 0..tp {
        let members: Vec<usize> = if g == 0 {
            vec![0]
        } else {
            ((g - 1) * TEMPORAL_GROUP + 1..=g * TEMPORAL_GROUP).collect()
        };
        let scale = 1.0 / members.len() as f64;
        for &t in &members {
            for y in 0..h {
                for x in 0..w {
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let src = rays.offset(t, y * factor + dy, x * factor + dx);
                            for c in 0..6 {
                                let ch = (c * factor + dy) * factor + dx;
                                let idx = out.index(g, ch, y, x);
                                out.data[idx] += scale * rays.data[src + c];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A linear map from `6·factor²` unshuffled ray channels to `C′` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct RayProjection {
    /// Row-major `C′ × (6·factor²)`.
    pub weight: Vec<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl RayProjection {
    pub fn new(weight: Vec<f64>, in_channels: usize, out_channels: usize) -> Result<Self> {
        if weight.len() != in_channels * out_channels {
            return Err(Error::shape(format!(
                "projection {out_channels}x{in_channels} needs {} weights, got {}",
                in_channels * out_channels,
                weight.len()
            )));
        }
        Ok(Self {
            weight,
            in_channels,
            out_channels,
        })
    }

    pub fn identity(channels: usize) -> Self {
        let mut weight = vec![0.0; channels * channels];
        for i in 0..channels {
            weight[i * channels + i] = 1.0;
        }
        Self {
            weight,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            weight: vec![0.0; in_channels * out_channels],
            in_channels,
            out_channels,
        }
    }

    /// Applies the map independently at every latent position.
    pub fn apply(&self, features: &LatentTensor) -> Result<RayLatent> {
        if features.channels != self.in_channels {
            return Err(Error::shape(format!(
                "projection expects {} channels, got {}",
                self.in_channels, features.channels
            )));
        }
        let plane = features.height * features.width;
        let mut out = LatentTensor::zeros(
            features.frames,
            self.out_channels,
            features.height,
            features.width,
        );
        for t in 0..features.frames {
            let src = &features.data[t * self.in_channels * plane..(t + 1) * self.in_channels * plane];
            let dst = &mut out.data[t * self.out_channels * plane..(t + 1) * self.out_channels * plane];
            gemm(
                1.0,
                MatRef::new(&self.weight, self.out_channels, self.in_channels),
                MatRef::new(src, self.in_channels, plane),
                0.0,
                MatMut::new(dst, self.out_channels, plane),
            );
        }
        Ok(out)
    }
}

/// Pixel-unshuffle by `factor`, project to `C′` channels, and group frames
/// in time so the result lines up with the codec latent of the same clip.
pub fn downsample_rayfield(
    rays: &RayField,
    factor: usize,
    projection: &RayProjection,
) -> Result<RayLatent> {
    if projection.in_channels != 6 * factor * factor {
        return Err(Error::shape(format!(
            "projection input {} does not match 6*{factor}^2",
            projection.in_channels
        )));
    }
    projection.apply(&unshuffle_rays(rays, factor)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};

    fn unit_traj(pose: Pose, width: usize, height: usize) -> CameraTrajectory {
        CameraTrajectory::with_shared(width, height, Intrinsics::new(1.0, 1.0, 0.0, 0.0), vec![pose])
            .unwrap()
    }

    #[test]
    fn principal_ray_from_origin() {
        let f = generate_plucker_rays(&unit_traj(Pose::identity(), 2, 1), 1, 2).unwrap();
        let (m, d) = f.ray(0, 0, 0);
        assert_eq!(d, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(m, Vector3::zeros());
    }

    #[test]
    fn translated_camera_moment() {
        let pose = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let f = generate_plucker_rays(&unit_traj(pose, 1, 1), 1, 1).unwrap();
        let (m, d) = f.ray(0, 0, 0);
        assert_eq!(d, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(m, Vector3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn off_axis_pixel_direction() {
        let f = generate_plucker_rays(&unit_traj(Pose::identity(), 2, 1), 1, 2).unwrap();
        let (m, d) = f.ray(0, 0, 1);
        let s = 1.0 / 2f64.sqrt();
        assert!((d - Vector3::new(s, 0.0, s)).norm() < 1e-15);
        assert_eq!(m, Vector3::zeros());
    }

    #[test]
    fn rejects_non_finite_input() {
        // non-finite intrinsics never make it into a trajectory
        let nan = Intrinsics::new(f64::NAN, 1.0, 0.0, 0.0);
        assert!(CameraTrajectory::with_shared(4, 4, nan, vec![Pose::identity()]).is_err());
        let traj = unit_traj(Pose::identity(), 4, 4);
        assert!(generate_plucker_rays(&traj, 0, 4).is_err());
    }

    #[test]
    fn downsample_shapes_for_17_frames() {
        let k = Intrinsics::centered(40.0, 64, 64);
        let traj = CameraTrajectory::with_shared(64, 64, k, vec![Pose::identity(); 17]).unwrap();
        let rays = generate_plucker_rays(&traj, 64, 64).unwrap();
        let proj = RayProjection::zeros(6 * 64, 16);
        let lat = downsample_rayfield(&rays, 8, &proj).unwrap();
        assert_eq!(lat.dims(), (5, 16, 8, 8));
        assert!(lat.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factor_one_identity_is_a_reshape() {
        let k = Intrinsics::new(2.0, 3.0, 1.0, 0.5);
        let pose = Pose::from_axis_angle(Vector3::new(0.0, 1.0, 0.2), 0.3);
        let traj = CameraTrajectory::with_shared(3, 2, k, vec![pose]).unwrap();
        let rays = generate_plucker_rays(&traj, 2, 3).unwrap();
        let lat = downsample_rayfield(&rays, 1, &RayProjection::identity(6)).unwrap();
        for j in 0..2 {
            for i in 0..3 {
                let (m, d) = rays.ray(0, j, i);
                for c in 0..3 {
                    assert_eq!(lat.at(0, c, j, i), m[c]);
                    assert_eq!(lat.at(0, c + 3, j, i), d[c]);
                }
            }
        }
    }

    #[test]
    fn indivisible_resolution_is_rejected() {
        let k = Intrinsics::centered(10.0, 12, 12);
        let traj = CameraTrajectory::with_shared(12, 12, k, vec![Pose::identity()]).unwrap();
        let rays = generate_plucker_rays(&traj, 12, 12).unwrap();
        assert!(unshuffle_rays(&rays, 8).is_err());
    }

    #[test]
    fn temporal_groups_average_frames() {
        // five frames translating along x: group 1 averages frames 1..=4
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0);
        let poses = (0..5)
            .map(|t| Pose::from_translation(Vector3::new(t as f64, 0.0, 0.0)))
            .collect();
        let traj = CameraTrajectory::with_shared(1, 1, k, poses).unwrap();
        let rays = generate_plucker_rays(&traj, 1, 1).unwrap();
        let lat = unshuffle_rays(&rays, 1).unwrap();
        assert_eq!(lat.frames, 2);
        // m_y = -t_x for the principal ray
        assert_eq!(lat.at(0, 1, 0, 0), 0.0);
        assert!((lat.at(1, 1, 0, 0) + 2.5).abs() < 1e-15);
    }
}
