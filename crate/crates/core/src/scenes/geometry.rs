//! Scene primitives and ray intersection.

use nalgebra::{Matrix3, Vector3};

use crate::camera::Pose;
use crate::error::{Error, Result};

/// Surface pattern: `albedo` modulated by a soft checker of the given period
/// in the primitive's local frame. A period of zero disables the pattern.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub albedo: [f64; 3],
    pub checker: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
        /// Local axes in world coordinates (texture orientation).
        frame: Matrix3<f64>,
        material: Material,
    },
    /// A rectangle through `center` spanned by the first two columns of
    /// `frame` with half sizes `extent`; the third column is the normal.
    Plane {
        center: Vector3<f64>,
        frame: Matrix3<f64>,
        extent: [f64; 2],
        material: Material,
    },
}

/// Nearest intersection along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Ray parameter for a unit direction.
    pub distance: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub albedo: [f64; 3],
}

/// Axis-aligned frames for planes facing `±x`, `±y` or `±z`.
pub fn axis_frame(axis: usize, positive: bool) -> Matrix3<f64> {
    let e = |i: usize| {
        let mut v = Vector3::zeros();
        v[i] = 1.0;
        v
    };
    let n = if positive { e(axis) } else { -e(axis) };
    let u = e((axis + 1) % 3);
    let v = n.cross(&u);
    Matrix3::from_columns(&[u, v, n])
}

fn soft_checker(local: &[f64], period: f64) -> f64 {
    if period <= 0.0 {
        return 1.0;
    }
    let s: f64 = local
        .iter()
        .map(|&x| (std::f64::consts::PI * x / period).sin())
        .product();
    0.75 + 0.25 * (4.0 * s).clamp(-1.0, 1.0)
}

fn shade_albedo(m: &Material, local: &[f64]) -> [f64; 3] {
    let k = soft_checker(local, m.checker);
    [m.albedo[0] * k, m.albedo[1] * k, m.albedo[2] * k]
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let (finite, ok) = match self {
            Primitive::Sphere { center, radius, frame, material } => (
                center.iter().chain(frame.iter()).all(|v| v.is_finite())
                    && radius.is_finite()
                    && material.albedo.iter().all(|v| v.is_finite()),
                *radius > 0.0,
            ),
            Primitive::Plane { center, frame, extent, material } => (
                center.iter().chain(frame.iter()).all(|v| v.is_finite())
                    && extent.iter().all(|v| v.is_finite())
                    && material.albedo.iter().all(|v| v.is_finite()),
                extent[0] > 0.0 && extent[1] > 0.0,
            ),
        };
        if !finite {
            return Err(Error::InvalidInput("scene primitive has non-finite geometry".into()));
        }
        if !ok {
            return Err(Error::InvalidInput("sphere radius and plane extents must be positive".into()));
        }
        Ok(())
    }

    /// Nearest hit with distance above `t_min`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<Hit> {
        match self {
            Primitive::Sphere { center, radius, frame, material } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|&t| t > t_min)?;
                let point = origin + dir * t;
                let normal = (point - center) / *radius;
                let local = frame.transpose() * (point - center);
                Some(Hit {
                    distance: t,
                    point,
                    normal,
                    albedo: shade_albedo(material, local.as_slice()),
                })
            }
            Primitive::Plane { center, frame, extent, material } => {
                let n = frame.column(2).into_owned();
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(center - origin)) / denom;
                if t <= t_min {
                    return None;
                }
                let point = origin + dir * t;
                let local = frame.transpose() * (point - center);
                if local.x.abs() > extent[0] || local.y.abs() > extent[1] {
                    return None;
                }
                let normal = if denom < 0.0 { n } else { -n };
                Some(Hit {
                    distance: t,
                    point,
                    normal,
                    albedo: shade_albedo(material, &[local.x, local.y]),
                })
            }
        }
    }

    /// The primitive moved by a rigid transform.
    pub fn transformed(&self, g: &Pose) -> Self {
        let r = g.rotation();
        match self {
            Primitive::Sphere { center, radius, frame, material } => Primitive::Sphere {
                center: g.transform_point(center),
                radius: *radius,
                frame: r * frame,
                material: *material,
            },
            Primitive::Plane { center, frame, extent, material } => Primitive::Plane {
                center: g.transform_point(center),
                frame: r * frame,
                extent: *extent,
                material: *material,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain() -> Material {
        Material {
            albedo: [1.0, 1.0, 1.0],
            checker: 0.0,
        }
    }

    #[test]
    fn sphere_hit_distance() {
        let s = Primitive::Sphere {
            center: Vector3::new(0.0, 0.0, 3.0),
            radius: 1.0,
            frame: Matrix3::identity(),
            material: plain(),
        };
        let h = s.intersect(&Vector3::zeros(), &Vector3::z(), 1e-9).unwrap();
        assert!((h.distance - 2.0).abs() < 1e-12);
        assert_eq!(h.normal, -Vector3::z());
        assert!(s.intersect(&Vector3::zeros(), &Vector3::x(), 1e-9).is_none());
    }

    #[test]
    fn plane_extent_and_facing() {
        let p = Primitive::Plane {
            center: Vector3::new(0.0, 1.0, 0.0),
            frame: axis_frame(1, false),
            extent: [2.0, 2.0],
            material: plain(),
        };
        let d = Vector3::new(0.0, 1.0, 0.0);
        let h = p.intersect(&Vector3::zeros(), &d, 1e-9).unwrap();
        assert!((h.distance - 1.0).abs() < 1e-12);
        assert_eq!(h.normal, -Vector3::y());
        let far = Vector3::new(5.0, 0.0, 0.0);
        assert!(p.intersect(&far, &d, 1e-9).is_none());
    }

    #[test]
    fn axis_frames_are_rotations() {
        for axis in 0..3 {
            for pos in [true, false] {
                let f = axis_frame(axis, pos);
                assert!((f.determinant() - 1.0).abs() < 1e-12);
                assert!((f.transpose() * f - Matrix3::identity()).norm() < 1e-12);
            }
        }
    }
}
