//! Analytic camera paths.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::camera::{CameraTrajectory, Intrinsics, Pose};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrajectoryKind {
    Orbit,
    Dolly,
    Pan,
    Truck,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] = [
        TrajectoryKind::Orbit,
        TrajectoryKind::Dolly,
        TrajectoryKind::Pan,
        TrajectoryKind::Truck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrajectoryKind::Orbit => "orbit",
            TrajectoryKind::Dolly => "dolly",
            TrajectoryKind::Pan => "pan",
            TrajectoryKind::Truck => "truck",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown trajectory kind '{s}'")))
    }
}

/// Path parameters.
///
/// * orbit: the camera circles `target` about the vertical axis (world `−y`
///   is up) at `radius`, `height` above the target, looking at it; frame `k`
///   is at angle `start + amount·k/F` degrees.
/// * dolly: moves `amount` world units per frame along the start optical axis.
/// * pan: rotates in place about the camera's vertical axis, `amount`
///   degrees in total over the clip.
/// * truck: moves `amount` world units per frame along the start right axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryParams {
    pub kind: TrajectoryKind,
    pub amount: f64,
    pub start: Pose,
    pub target: Vector3<f64>,
    pub radius: f64,
    pub height: f64,
    pub start_angle: f64,
}

impl TrajectoryParams {
    pub fn orbit(target: Vector3<f64>, radius: f64, height: f64, start_angle: f64, sweep: f64) -> Self {
        Self {
            kind: TrajectoryKind::Orbit,
            amount: sweep,
            start: Pose::identity(),
            target,
            radius,
            height,
            start_angle,
        }
    }

    pub fn linear(kind: TrajectoryKind, start: Pose, amount: f64) -> Self {
        Self {
            kind,
            amount,
            start,
            target: Vector3::zeros(),
            radius: 0.0,
            height: 0.0,
            start_angle: 0.0,
        }
    }
}

/// World vertical axis (OpenCV convention: `y` points down).
pub fn up() -> Vector3<f64> {
    Vector3::new(0.0, -1.0, 0.0)
}

fn rot_y(deg: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::y()), deg.to_radians()).matrix()
}

/// Camera poses for `frames` frames.
pub fn make_poses(params: &TrajectoryParams, frames: usize) -> Result<Vec<Pose>> {
    if frames < 2 {
        return Err(Error::Config(format!("trajectory needs at least 2 frames, got {frames}")));
    }
    let p = params;
    let finite = [p.amount, p.radius, p.height, p.start_angle]
        .iter()
        .chain(p.target.iter())
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Config("trajectory parameters must be finite".into()));
    }
    let f = frames as f64;
    let last = (frames - 1) as f64;
    let r0 = *p.start.rotation();
    let c0 = *p.start.translation();
    (0..frames)
        .map(|k| {
            let k = k as f64;
            match p.kind {
                TrajectoryKind::Orbit => {
                    if p.radius <= 0.0 {
                        return Err(Error::Config("orbit radius must be positive".into()));
                    }
                    let a = rot_y(p.start_angle + p.amount * k / f);
                    let offset = Vector3::new(0.0, -p.height, -p.radius);
                    Pose::look_at(p.target + a * offset, p.target, up())
                }
                TrajectoryKind::Dolly => Pose::new(r0, c0 + r0.column(2) * (p.amount * k)),
                TrajectoryKind::Truck => Pose::new(r0, c0 + r0.column(0) * (p.amount * k)),
                TrajectoryKind::Pan => Pose::new(r0 * rot_y(p.amount * k / last), c0),
            }
        })
        .collect()
}

/// A full trajectory with shared intrinsics.
pub fn make_trajectory(
    params: &TrajectoryParams,
    frames: usize,
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
) -> Result<CameraTrajectory> {
    CameraTrajectory::with_shared(width, height, intrinsics, make_poses(params, frames)?)
}
