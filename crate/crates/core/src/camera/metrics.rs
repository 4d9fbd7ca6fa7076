//! Rotation and translation error between two camera trajectories.
//!
//! Both trajectories are first expressed relative to their own first frame.
//! RE is the mean geodesic angle (degrees) between corresponding rotations;
//! TE is the mean distance between corresponding camera centres after each
//! trajectory is rescaled so its mean centre norm is 1. Frame 0 is identical
//! after normalization and is excluded from both means.

use nalgebra::Vector3;

use super::pose::{normalize_to_first_frame, rotation_angle, CameraTrajectory};
use crate::error::{Error, Result};

fn check_pair(a: &CameraTrajectory, b: &CameraTrajectory) -> Result<()> {
    if a.frame_count() != b.frame_count() {
        return Err(Error::shape(format!(
            "trajectories have {} and {} frames",
            a.frame_count(),
            b.frame_count()
        )));
    }
    if a.frame_count() < 2 {
        return Err(Error::shape("pose errors need at least two frames"));
    }
    Ok(())
}

/// Mean geodesic rotation error in degrees over frames `1..T`.
pub fn rotation_error(a: &CameraTrajectory, b: &CameraTrajectory) -> Result<f64> {
    check_pair(a, b)?;
    let na = normalize_to_first_frame(a);
    let nb = normalize_to_first_frame(b);
    let n = a.frame_count() - 1;
    let total: f64 = na.poses()[1..]
        .iter()
        .zip(&nb.poses()[1..])
        .map(|(pa, pb)| rotation_angle(&(pa.rotation().transpose() * pb.rotation())).to_degrees())
        .sum();
    Ok(total / n as f64)
}

fn scaled_centers(traj: &CameraTrajectory) -> Vec<Vector3<f64>> {
    let norm = normalize_to_first_frame(traj);
    let centers: Vec<Vector3<f64>> = norm.poses()[1..].iter().map(|p| p.center()).collect();
    let mean_norm = centers.iter().map(|c| c.norm()).sum::<f64>() / centers.len() as f64;
    if mean_norm > 0.0 {
        centers.iter().map(|c| c / mean_norm).collect()
    } else {
        centers
    }
}

/// Mean scale-normalized camera-centre distance over frames `1..T`.
pub fn translation_error(a: &CameraTrajectory, b: &CameraTrajectory) -> Result<f64> {
    check_pair(a, b)?;
    let ca = scaled_centers(a);
    let cb = scaled_centers(b);
    Ok(ca.iter().zip(&cb).map(|(x, y)| (x - y).norm()).sum::<f64>() / ca.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose};
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};

    fn traj(poses: Vec<Pose>) -> CameraTrajectory {
        CameraTrajectory::with_shared(64, 64, Intrinsics::centered(50.0, 64, 64), poses).unwrap()
    }

    fn random_pose<R: Rng>(rng: &mut R) -> Pose {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0));
        let r = Pose::from_axis_angle(axis, rng.gen_range(-2.0..2.0));
        let t = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        Pose::new(*r.rotation(), t).unwrap()
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = traj((0..6).map(|_| random_pose(&mut rng)).collect());
        assert!(rotation_error(&a, &a).unwrap() < 1e-6);
        assert!(translation_error(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn fixed_ten_degree_perturbation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = normalize_to_first_frame(&traj((0..5).map(|_| random_pose(&mut rng)).collect()));
        let rz = Pose::from_axis_angle(Vector3::z(), 10f64.to_radians());
        let mut poses = a.poses().to_vec();
        for p in poses.iter_mut().skip(1) {
            *p = Pose::new(p.rotation() * rz.rotation(), *p.translation()).unwrap();
        }
        let b = traj(poses);
        let re = rotation_error(&a, &b).unwrap();
        assert!((re - 10.0).abs() < 1e-6, "RE {re}");
    }

    #[test]
    fn rotation_error_matches_per_frame_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = traj((0..8).map(|_| random_pose(&mut rng)).collect());
        let b = traj((0..8).map(|_| random_pose(&mut rng)).collect());
        // oracle: relative rotations via explicit 4x4 inverses and an arccos per frame
        let rel = |t: &CameraTrajectory, k: usize| -> Matrix3<f64> {
            let m = t.poses()[0].to_matrix4().try_inverse().unwrap() * t.poses()[k].to_matrix4();
            m.fixed_view::<3, 3>(0, 0).into_owned()
        };
        let mut sum = 0.0;
        for k in 1..8 {
            let d = rel(&a, k).transpose() * rel(&b, k);
            let c = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            sum += c.acos().to_degrees();
        }
        let oracle = sum / 7.0;
        assert!((rotation_error(&a, &b).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn scaled_centres_give_zero_translation_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = traj((0..6).map(|_| random_pose(&mut rng)).collect());
        let scaled: Vec<Pose> = a
            .poses()
            .iter()
            .map(|p| Pose::new(*p.rotation(), p.translation() * 3.0).unwrap())
            .collect();
        let b = traj(scaled);
        assert!(translation_error(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn hand_built_three_frame_translation_error() {
        let id = *Pose::identity().rotation();
        let a = traj(vec![
            Pose::identity(),
            Pose::new(id, Vector3::new(1.0, 0.0, 0.0)).unwrap(),
            Pose::new(id, Vector3::new(3.0, 0.0, 0.0)).unwrap(),
        ]);
        let b = traj(vec![
            Pose::identity(),
            Pose::new(id, Vector3::new(0.0, 2.0, 0.0)).unwrap(),
            Pose::new(id, Vector3::new(0.0, 2.0, 0.0)).unwrap(),
        ]);
        // a: centres (1,0,0),(3,0,0), mean norm 2 -> (0.5,0,0),(1.5,0,0)
        // b: centres (0,2,0),(0,2,0), mean norm 2 -> (0,1,0),(0,1,0)
        let d1 = (0.5f64 * 0.5 + 1.0).sqrt();
        let d2 = (1.5f64 * 1.5 + 1.0).sqrt();
        let oracle = (d1 + d2) / 2.0;
        assert!((translation_error(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn errors_are_symmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = traj((0..5).map(|_| random_pose(&mut rng)).collect());
        let b = traj((0..5).map(|_| random_pose(&mut rng)).collect());
        assert!((rotation_error(&a, &b).unwrap() - rotation_error(&b, &a).unwrap()).abs() < 1e-9);
        assert!((translation_error(&a, &b).unwrap() - translation_error(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let a = traj(vec![Pose::identity(); 3]);
        let b = traj(vec![Pose::identity(); 4]);
        assert!(rotation_error(&a, &b).is_err());
        assert!(translation_error(&a, &b).is_err());
        let single = traj(vec![Pose::identity()]);
        assert!(rotation_error(&single, &single).is_err());
    }

    #[test]
    fn static_trajectories_skip_scaling() {
        let a = traj(vec![Pose::identity(); 3]);
        assert_eq!(translation_error(&a, &a).unwrap(), 0.0);
    }
}
