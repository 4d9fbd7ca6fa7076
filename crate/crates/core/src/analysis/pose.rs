//! Camera recovery from generated frames by direct photometric alignment.
//!
//! Frame 0 is back-projected with its known depth; each later frame's pose
//! relative to frame 0 is the one whose warp best explains that frame's
//! intensities. Levenberg-Marquardt on the mean Huber loss over the points
//! that stay in view, on a two-level blur pyramid, started from the best
//! point of pan/tilt grids around the previous pose and a constant-velocity
//! prediction.

use nalgebra::{Matrix6, Rotation3, Vector3, Vector6};

use crate::camera::{rotation_error, translation_error, CameraTrajectory, Intrinsics, Pose};
use crate::codec::{DepthVideo, VideoTensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignConfig {
    /// Pixels of frame 0 with depth at or above this are treated as background.
    pub max_depth: f64,
    /// Box-blur passes at the coarse level.
    pub coarse_blur: usize,
    /// Half-width in degrees of the pan/tilt grid searched before refinement.
    pub search_degrees: f64,
    /// Grid spacing in degrees; 0 disables the search.
    pub search_step_degrees: f64,
    pub coarse_iterations: usize,
    pub fine_iterations: usize,
    pub huber: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_depth: 0.99 * crate::scenes::FAR_PLANE,
            coarse_blur: 3,
            search_degrees: 8.0,
            search_step_degrees: 1.0,
            coarse_iterations: 15,
            fine_iterations: 10,
            huber: 0.1,
        }
    }
}

struct Gray {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Gray {
    fn from_frame(video: &VideoTensor, t: usize) -> Self {
        let (w, h) = (video.width, video.height);
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                v[y * w + x] = (0..3).map(|c| video.at(t, c, y, x)).sum::<f64>() / 3.0;
            }
        }
        Self { w, h, v }
    }

    fn blurred(&self, passes: usize) -> Self {
        let mut v = self.v.clone();
        for _ in 0..passes {
            let src = v.clone();
            for y in 0..self.h {
                for x in 0..self.w {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                            if yy >= 0 && xx >= 0 && (yy as usize) < self.h && (xx as usize) < self.w {
                                s += src[yy as usize * self.w + xx as usize];
                                n += 1.0;
                            }
                        }
                    }
                    v[y * self.w + x] = s / n;
                }
            }
        }
        Self { w: self.w, h: self.h, v }
    }

    fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.w - 1) as f64 && v <= (self.h - 1) as f64) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.w.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.h.saturating_sub(2));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let at = |x: usize, y: usize| self.v[y * self.w + x];
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        Some(
            (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0))
                + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1)),
        )
    }
}

/// Pose after a left-multiplied rotation increment and translation increment.
fn perturb(p: &Pose, xi: &Vector6<f64>) -> Pose {
    let dr = Rotation3::new(Vector3::new(xi[0], xi[1], xi[2]));
    Pose::new(dr.matrix() * p.rotation(), p.translation() + Vector3::new(xi[3], xi[4], xi[5]))
        .expect("composition of rotations")
}

/// Poses that keep fewer than this fraction of frame 0's points in view
/// are rejected.
pub const MIN_OVERLAP: f64 = 0.1;

struct Problem<'a> {
    points: &'a [(Vector3<f64>, f64)],
    target: &'a Gray,
    k: Intrinsics,
}

impl Problem<'_> {
    /// Residuals `I_k(π(T⁻¹X)) − I_0(p)`; NaN for points out of view.
    fn residuals(&self, pose: &Pose) -> Vec<f64> {
        let inv = pose.inverse();
        self.points
            .iter()
            .map(|(x, i0)| {
                let xc = inv.transform_point(x);
                if xc.z <= 1e-3 {
                    return f64::NAN;
                }
                let (u, v) = self.k.project(&xc);
                self.target.bilinear(u, v).map_or(f64::NAN, |i| i - i0)
            })
            .collect()
    }

    /// Mean Huber loss over the points in view; infinite below [`MIN_OVERLAP`].
    fn cost(&self, r: &[f64], huber: f64) -> f64 {
        let (sum, n) = r.iter().filter(|e| !e.is_nan()).fold((0.0, 0usize), |(s, n), &e| {
            let a = e.abs();
            let l = if a <= huber { 0.5 * e * e } else { huber * (a - 0.5 * huber) };
            (s + l, n + 1)
        });
        if n == 0 || (n as f64) < MIN_OVERLAP * r.len() as f64 {
            f64::INFINITY
        } else {
            sum / n as f64
        }
    }

    /// Best of `pose` rotated by each offset on a pan/tilt grid.
    fn grid_search(&self, pose: Pose, half: f64, step: f64, huber: f64) -> Pose {
        if step <= 0.0 || half <= 0.0 {
            return pose;
        }
        let n = (half / step).floor() as i64;
        let mut best = (self.cost(&self.residuals(&pose), huber), pose);
        for a in -n..=n {
            for b in -n..=n {
                if a == 0 && b == 0 {
                    continue;
                }
                let (tilt, pan) = ((a as f64 * step).to_radians(), (b as f64 * step).to_radians());
                let cand = perturb(&pose, &Vector6::new(tilt, pan, 0.0, 0.0, 0.0, 0.0));
                let c = self.cost(&self.residuals(&cand), huber);
                if c < best.0 {
                    best = (c, cand);
                }
            }
        }
        best.1
    }

    fn refine(&self, mut pose: Pose, iterations: usize, huber: f64) -> Pose {
        let h = 1e-5;
        let mut lambda = 1e-3;
        let mut r = self.residuals(&pose);
        let mut cost = self.cost(&r, huber);
        for _ in 0..iterations {
            let mut jac = vec![Vector6::zeros(); r.len()];
            for d in 0..6 {
                let mut e = Vector6::zeros();
                e[d] = h;
                let rp = self.residuals(&perturb(&pose, &e));
                let rm = self.residuals(&perturb(&pose, &-e));
                for (j, (a, b)) in jac.iter_mut().zip(rp.iter().zip(&rm)) {
                    let g = (a - b) / (2.0 * h);
                    j[d] = if g.is_nan() { 0.0 } else { g };
                }
            }
            let mut jtj = Matrix6::zeros();
            let mut jtr = Vector6::zeros();
            for (j, &e) in jac.iter().zip(&r).filter(|(_, e)| !e.is_nan()) {
                let w = if e.abs() <= huber { 1.0 } else { huber / e.abs() };
                jtj += w * j * j.transpose();
                jtr += w * e * j;
            }
            let mut improved = false;
            for _ in 0..6 {
                let mut a = jtj;
                for d in 0..6 {
                    a[(d, d)] += lambda * (jtj[(d, d)] + 1e-9);
                }
                let Some(step) = a.lu().solve(&(-jtr)) else {
                    lambda *= 10.0;
                    continue;
                };
                let cand = perturb(&pose, &step);
                let rc = self.residuals(&cand);
                let cc = self.cost(&rc, huber);
                if cc < cost {
                    pose = cand;
                    r = rc;
                    cost = cc;
                    lambda = (lambda * 0.3).max(1e-7);
                    improved = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
        pose
    }
}

/// Estimates camera-to-world poses (frame 0 at the origin) for every frame
/// of `video`, given the depth of frame 0 and the intrinsics.
pub fn estimate_trajectory(
    video: &VideoTensor,
    depth0: &DepthVideo,
    reference: &VideoTensor,
    k: Intrinsics,
    cfg: &AlignConfig,
) -> Result<CameraTrajectory> {
    if depth0.height != video.height || depth0.width != video.width {
        return Err(Error::shape("depth and video sizes differ"));
    }
    if reference.height != video.height || reference.width != video.width {
        return Err(Error::shape("reference and video sizes differ"));
    }
    let i0 = Gray::from_frame(reference, 0);
    let i0c = i0.blurred(cfg.coarse_blur);
    let (w, h) = (video.width, video.height);
    let mut fine_pts = Vec::new();
    let mut coarse_pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let z = depth0.data[y * w + x];
            if !(z > 0.0 && z < cfg.max_depth) {
                continue;
            }
            let p = Vector3::new((x as f64 - k.cx) / k.fx * z, (y as f64 - k.cy) / k.fy * z, z);
            fine_pts.push((p, i0.v[y * w + x]));
            coarse_pts.push((p, i0c.v[y * w + x]));
        }
    }
    if fine_pts.len() < 6 {
        return Err(Error::InvalidInput("frame 0 has too few foreground pixels to align".into()));
    }
    let mut poses = vec![Pose::identity()];
    let mut current = Pose::identity();
    let mut step = Pose::identity();
    for t in 1..video.frames {
        let target = Gray::from_frame(video, t);
        let coarse = target.blurred(cfg.coarse_blur);
        let previous = current;
        let problem = Problem {
            points: &coarse_pts,
            target: &coarse,
            k,
        };
        let search = |start: Pose| {
            let p = problem.grid_search(start, cfg.search_degrees, cfg.search_step_degrees, cfg.huber);
            (problem.cost(&problem.residuals(&p), cfg.huber), p)
        };
        // the previous pose competes with the prediction, so a wrong step
        // cannot compound across frames
        let (moving, still) = (search(current.compose(&step)), search(current));
        let guess = if still.0 < moving.0 { still.1 } else { moving.1 };
        current = problem.refine(guess, cfg.coarse_iterations, cfg.huber);
        current = Problem {
            points: &fine_pts,
            target: &target,
            k,
        }
        .refine(current, cfg.fine_iterations, cfg.huber);
        step = previous.inverse().compose(&current);
        poses.push(current);
    }
    CameraTrajectory::with_shared(w, h, k, poses)
}

/// RE (degrees) and TE of the trajectory recovered from `video` against `gt`.
pub fn pose_errors(
    video: &VideoTensor,
    depth0: &DepthVideo,
    reference: &VideoTensor,
    gt: &CameraTrajectory,
    cfg: &AlignConfig,
) -> Result<(f64, f64)> {
    let est = estimate_trajectory(video, depth0, reference, gt.intrinsics_at(0), cfg)?;
    Ok((rotation_error(&est, gt)?, translation_error(&est, gt)?))
}
