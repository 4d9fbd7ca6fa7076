use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

/// Tolerance used to accept a matrix as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Pinhole intrinsics in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Square pixels with the principal point at the image centre.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Checks positivity of the focal lengths and that the principal point
    /// lies inside a `width × height` image.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidInput("non-finite intrinsics".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..width as f64).contains(&self.cx) || !(0.0..height as f64).contains(&self.cy) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Unit camera-frame direction through pixel `(i, j)`.
    pub fn pixel_direction(&self, i: f64, j: f64) -> Vector3<f64> {
        Vector3::new((i - self.cx) / self.fx, (j - self.cy) / self.fy, 1.0).normalize()
    }

    /// Pixel coordinates of a camera-frame point (`z > 0`).
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        )
    }
}

/// A rigid camera-to-world transform: `x_world = R · x_cam + t`.
///
/// The columns of `rotation` are the camera axes (right, down, forward)
/// expressed in world coordinates and `translation` is the camera centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting non-finite entries and matrices that are not
    /// proper rotations within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pose entry".into()));
        }
        let err = rotation_defect(&rotation);
        if err > ROTATION_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal with det +1 (defect {err:.3e})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle_rad` about `axis` through the origin.
    pub fn from_axis_angle(axis: Vector3<f64>, angle_rad: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle_rad);
        Self {
            rotation: *r.matrix(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, with image "up" along `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidInput("look-at target equals eye".into()));
        }
        let forward = forward.normalize();
        let right = (-up).cross(&forward);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidInput("look-at direction parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::new(rotation, eye)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    /// Parses a row-major 3×4 `[R | t]`. A rotation whose defect lies between
    /// [`ROTATION_TOLERANCE`] and `tolerance` is projected onto the nearest
    /// rotation; anything closer is kept verbatim.
    pub fn from_row_major_3x4(v: &[f64; 12], tolerance: f64) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite pose entry".into()));
        }
        let defect = rotation_defect(&rotation);
        if defect > tolerance {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (defect {defect:.3e})"
            )));
        }
        let rotation = if defect > ROTATION_TOLERANCE {
            nearest_rotation(&rotation)
        } else {
            rotation
        };
        Self::new(rotation, translation)
    }
}

/// Largest of `‖RᵀR − I‖_max` and `|det R − 1|`.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Orthogonal Procrustes projection onto SO(3).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Geodesic angle of a rotation, in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos)
}

/// Per-frame or shared intrinsics for a clip.
#[derive(Clone, Debug, PartialEq)]
pub enum IntrinsicsSet {
    Shared(Intrinsics),
    PerFrame(Vec<Intrinsics>),
}

/// Intrinsics and camera-to-world poses of a clip at a fixed resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraTrajectory {
    width: usize,
    height: usize,
    intrinsics: IntrinsicsSet,
    poses: Vec<Pose>,
}

impl CameraTrajectory {
    pub fn new(
        width: usize,
        height: usize,
        intrinsics: IntrinsicsSet,
        poses: Vec<Pose>,
    ) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one pose".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("trajectory resolution must be positive".into()));
        }
        match &intrinsics {
            IntrinsicsSet::Shared(k) => k.validate(width, height)?,
            IntrinsicsSet::PerFrame(ks) => {
                if ks.len() != poses.len() {
                    return Err(Error::shape(format!(
                        "{} per-frame intrinsics for {} poses",
                        ks.len(),
                        poses.len()
                    )));
                }
                for k in ks {
                    k.validate(width, height)?;
                }
            }
        }
        Ok(Self {
            width,
            height,
            intrinsics,
            poses,
        })
    }

    pub fn with_shared(width: usize, height: usize, k: Intrinsics, poses: Vec<Pose>) -> Result<Self> {
        Self::new(width, height, IntrinsicsSet::Shared(k), poses)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn intrinsics(&self) -> &IntrinsicsSet {
        &self.intrinsics
    }

    pub fn intrinsics_at(&self, frame: usize) -> Intrinsics {
        match &self.intrinsics {
            IntrinsicsSet::Shared(k) => *k,
            IntrinsicsSet::PerFrame(ks) => ks[frame],
        }
    }

    /// Same intrinsics and resolution, new poses.
    pub fn with_poses(&self, poses: Vec<Pose>) -> Result<Self> {
        let intrinsics = match &self.intrinsics {
            IntrinsicsSet::PerFrame(ks) if ks.len() != poses.len() => {
                return Err(Error::shape("pose count changes per-frame intrinsics".to_string()))
            }
            other => other.clone(),
        };
        Self::new(self.width, self.height, intrinsics, poses)
    }

    /// Every `stride`-th frame, starting at frame 0.
    pub fn subsample(&self, stride: usize, frames: usize) -> Result<Self> {
        if stride == 0 || frames == 0 || (frames - 1) * stride >= self.poses.len() {
            return Err(Error::InvalidInput(format!(
                "cannot take {frames} frames at stride {stride} from {}",
                self.poses.len()
            )));
        }
        let idx: Vec<usize> = (0..frames).map(|k| k * stride).collect();
        let poses = idx.iter().map(|&k| self.poses[k]).collect();
        let intrinsics = match &self.intrinsics {
            IntrinsicsSet::Shared(k) => IntrinsicsSet::Shared(*k),
            IntrinsicsSet::PerFrame(ks) => IntrinsicsSet::PerFrame(idx.iter().map(|&k| ks[k]).collect()),
        };
        Self::new(self.width, self.height, intrinsics, poses)
    }
}

/// Re-express every pose relative to the first: `pose[k] ← pose[0]⁻¹ ∘ pose[k]`.
pub fn normalize_to_first_frame(traj: &CameraTrajectory) -> CameraTrajectory {
    let inv0 = traj.poses[0].inverse();
    let mut poses: Vec<Pose> = traj.poses.iter().map(|p| inv0.compose(p)).collect();
    poses[0] = Pose::identity();
    CameraTrajectory {
        poses,
        ..traj.clone()
    }
}
