use dualcam::analysis::{linear_cka, FeatureMatrix};
use dualcam::camera::{
    generate_plucker_rays, normalize_to_first_frame, parse_trajectory, serialize_trajectory, CameraTrajectory,
    Intrinsics, Pose,
};
use dualcam::codec::{CodecConfig, LatentCodec, VideoKind, VideoTensor};
use dualcam::diffusion::{build_timestep_schedule, Stage};
use nalgebra::{Vector3, Matrix3};
use proptest::prelude::*;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        0.0f64..std::f64::consts::PI,
        prop::array::uniform3(-5.0f64..5.0),
    )
        .prop_filter("axis", |(a, _, _)| Vector3::from(*a).norm() > 0.1)
        .prop_map(|(a, angle, t)| {
            let r = Pose::from_axis_angle(Vector3::from(a), angle);
            Pose::new(*r.rotation(), Vector3::from(t)).unwrap()
        })
}

fn trajectory(poses: Vec<Pose>, focal: f64) -> CameraTrajectory {
    CameraTrajectory::with_shared(8, 6, Intrinsics::centered(focal, 8, 6), poses).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plucker_constraint_and_unit_direction(
        poses in prop::collection::vec(pose_strategy(), 1..4),
        focal in 2.0f64..20.0,
    ) {
        let rays = generate_plucker_rays(&trajectory(poses, focal), 6, 8).unwrap();
        for t in 0..rays.frames {
            for j in 0..6 {
                for i in 0..8 {
                    let (m, d) = rays.ray(t, j, i);
                    prop_assert!((d.norm() - 1.0).abs() < 1e-12);
                    prop_assert!(m.dot(&d).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rays_follow_rigid_world_motion(
        poses in prop::collection::vec(pose_strategy(), 1..3),
        g in pose_strategy(),
    ) {
        let a = generate_plucker_rays(&trajectory(poses.clone(), 7.0), 6, 8).unwrap();
        let moved: Vec<Pose> = poses.iter().map(|p| g.compose(p)).collect();
        let b = generate_plucker_rays(&trajectory(moved, 7.0), 6, 8).unwrap();
        let r: &Matrix3<f64> = g.rotation();
        let tg = g.translation();
        for t in 0..a.frames {
            for j in 0..6 {
                for i in 0..8 {
                    let (m, d) = a.ray(t, j, i);
                    let (m2, d2) = b.ray(t, j, i);
                    let d_exp = r * d;
                    let m_exp = r * m + tg.cross(&d_exp);
                    prop_assert!((d2 - d_exp).norm() < 1e-9);
                    prop_assert!((m2 - m_exp).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn first_frame_normalization_is_world_invariant(
        poses in prop::collection::vec(pose_strategy(), 2..4),
        g in pose_strategy(),
    ) {
        let a = normalize_to_first_frame(&trajectory(poses.clone(), 5.0));
        let moved: Vec<Pose> = poses.iter().map(|p| g.compose(p)).collect();
        let b = normalize_to_first_frame(&trajectory(moved, 5.0));
        for (p, q) in a.poses().iter().zip(b.poses()) {
            prop_assert!((p.rotation() - q.rotation()).norm() < 1e-9);
            prop_assert!((p.translation() - q.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn trajectory_text_round_trip(poses in prop::collection::vec(pose_strategy(), 1..5)) {
        let traj = trajectory(poses, 9.5);
        let back = parse_trajectory(&serialize_trajectory(&traj)).unwrap();
        prop_assert_eq!(back, traj);
    }

    #[test]
    fn codec_is_linear(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 5 * 3 * 8 * 16;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let codec = LatentCodec::new(CodecConfig { seed, ..CodecConfig::default() }).unwrap();
        let enc = |d: Vec<f64>| codec.encode(&VideoTensor::from_vec(5, 8, 16, VideoKind::Rgb, d).unwrap()).unwrap();
        let (ex, ey, em) = (enc(x), enc(y), enc(mix));
        for k in 0..em.data.len() {
            prop_assert!((em.data[k] - (a * ex.data[k] + b * ey.data[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn schedule_allocation(base in 1usize..12, delta in 0usize..20, pick in 0usize..4) {
        let base = 3 * base;
        let extra = Stage::ALL.get(pick).copied();
        let s = build_timestep_schedule(base, delta, extra).unwrap();
        let per = base / 3;
        let mut expected = [per; 3];
        if let Some(st) = extra {
            expected[Stage::ALL.iter().position(|&x| x == st).unwrap()] += delta;
        }
        prop_assert_eq!(s.stage_counts(), expected);
        let ts = s.timesteps();
        prop_assert_eq!(ts.len(), expected.iter().sum::<usize>());
        prop_assert_eq!(ts[0], 1.0);
        for w in ts.windows(2) {
            prop_assert!(w[0] > w[1]);
        }
        prop_assert!(ts.iter().all(|&t| t > 0.0 && t <= 1.0));
    }

    #[test]
    fn stage_partition(t in 0.0f64..=1.0) {
        let hits: Vec<Stage> = Stage::ALL
            .iter()
            .copied()
            .filter(|st| {
                let (lo, hi) = st.interval();
                (t > lo && t <= hi) || (*st == Stage::Late && t == 0.0)
            })
            .collect();
        prop_assert_eq!(hits.len(), 1);
        prop_assert_eq!(hits[0], Stage::of(t));
    }

    #[test]
    fn cka_invariances(seed in 0u64..500, scale in 0.1f64..10.0) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (24, 5);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let x = draw(n * d);
        let y = draw(n * d);
        let q = nalgebra::DMatrix::from_vec(d, d, draw(d * d)).qr().q();
        let xm = nalgebra::DMatrix::from_row_slice(n, d, &x);
        let xq = &xm * &q * scale;
        let mut xq_rows = Vec::with_capacity(n * d);
        for r in 0..n {
            for c in 0..d {
                xq_rows.push(xq[(r, c)]);
            }
        }
        let fx = FeatureMatrix::new(n, d, x).unwrap();
        let fy = FeatureMatrix::new(n, d, y).unwrap();
        let fq = FeatureMatrix::new(n, d, xq_rows).unwrap();
        let c = linear_cka(&fx, &fy).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((linear_cka(&fx, &fx).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((c - linear_cka(&fy, &fx).unwrap()).abs() < 1e-12);
        prop_assert!((c - linear_cka(&fq, &fy).unwrap()).abs() < 1e-9);
    }
}
