use std::fs;

use dualcam::camera::{rotation_error, CameraTrajectory, Intrinsics, Pose};
use dualcam::scenes::{
    axis_frame, generate_clip, load_dataset, make_dataset, make_poses, make_trajectory, render_clip, Material,
    Primitive, SceneSpec, TrajectoryKind, TrajectoryParams, FAR_PLANE,
};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn checker(albedo: [f64; 3]) -> Material {
    Material { albedo, checker: 0.4 }
}

fn sphere(center: [f64; 3], radius: f64) -> Primitive {
    Primitive::Sphere {
        center: Vector3::from(center),
        radius,
        frame: Matrix3::identity(),
        material: checker([0.8, 0.3, 0.2]),
    }
}

fn scene(primitives: Vec<Primitive>) -> SceneSpec {
    SceneSpec {
        primitives,
        light: Vector3::new(0.3, -1.0, -0.5),
        background: [0.1, 0.2, 0.3],
        tag: 0,
    }
}

fn single(pose: Pose, k: Intrinsics, w: usize, h: usize) -> CameraTrajectory {
    CameraTrajectory::with_shared(w, h, k, vec![pose]).unwrap()
}

#[test]
fn dolly_with_zero_speed_is_static() {
    let start = Pose::look_at(Vector3::new(0.3, 0.0, -1.0), Vector3::new(0.0, 0.5, 4.0), -Vector3::y()).unwrap();
    let poses = make_poses(&TrajectoryParams::linear(TrajectoryKind::Dolly, start, 0.0), 9).unwrap();
    assert!(poses.iter().all(|p| *p == poses[0]));
}

#[test]
fn full_orbit_relative_rotation() {
    let f = 12;
    let params = TrajectoryParams::orbit(Vector3::new(0.0, 0.0, 5.0), 4.0, 0.5, 0.0, 360.0);
    let poses = make_poses(&params, f).unwrap();
    let rel = poses[f - 1].rotation() * poses[0].rotation().transpose();
    let deg = 360.0 * (f - 1) as f64 / f as f64;
    let expect = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::y()), deg.to_radians());
    assert!((rel - expect.matrix()).norm() < 1e-9);
    for p in &poses {
        let c = p.center() - Vector3::new(0.0, 0.0, 5.0);
        assert!((Vector3::new(c.x, 0.0, c.z).norm() - 4.0).abs() < 1e-9);
    }
}

#[test]
fn pan_matches_closed_form() {
    let f = 7;
    let start = Pose::look_at(Vector3::new(0.0, -0.2, 0.0), Vector3::new(1.0, 0.3, 5.0), -Vector3::y()).unwrap();
    let k = Intrinsics::centered(32.0, 32, 32);
    let traj = make_trajectory(&TrajectoryParams::linear(TrajectoryKind::Pan, start, 30.0), f, k, 32, 32).unwrap();
    // rotate about the camera's own vertical axis expressed in world coordinates
    let axis = Unit::new_normalize(start.rotation().column(1).into_owned());
    let expect: Vec<Pose> = (0..f)
        .map(|i| {
            let a = (30.0 * i as f64 / (f - 1) as f64).to_radians();
            let r = Rotation3::from_axis_angle(&axis, a).matrix() * start.rotation();
            Pose::new(r, *start.translation()).unwrap()
        })
        .collect();
    let oracle = traj.with_poses(expect).unwrap();
    assert!(rotation_error(&traj, &oracle).unwrap() < 1e-6);
    let last = traj.poses()[f - 1].rotation() * start.rotation().transpose();
    assert!((dualcam::camera::rotation_angle(&last).to_degrees() - 30.0).abs() < 1e-9);
}

#[test]
fn trajectory_rejects_bad_params() {
    let p = TrajectoryParams::linear(TrajectoryKind::Truck, Pose::identity(), f64::NAN);
    assert!(make_poses(&p, 5).is_err());
    let p = TrajectoryParams::linear(TrajectoryKind::Truck, Pose::identity(), 0.1);
    assert!(make_poses(&p, 1).is_err());
    assert!(make_poses(&TrajectoryParams::orbit(Vector3::zeros(), 0.0, 0.0, 0.0, 10.0), 5).is_err());
}

#[test]
fn looking_away_gives_background() {
    let s = scene(vec![sphere([0.0, 0.0, 5.0], 1.0)]);
    let back = Pose::from_axis_angle(Vector3::y(), std::f64::consts::PI);
    let clip = render_clip(&s, &single(back, Intrinsics::centered(8.0, 8, 8), 8, 8), 8, 8).unwrap();
    assert!(clip.depth.data.iter().all(|&d| d == FAR_PLANE));
    for c in 0..3 {
        let v = 2.0 * s.background[c] - 1.0;
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(clip.rgb.at(0, c, y, x), v);
            }
        }
    }
}

#[test]
fn unit_sphere_at_two() {
    let s = scene(vec![sphere([0.0, 0.0, 2.0], 1.0)]);
    let clip = render_clip(&s, &single(Pose::identity(), Intrinsics::centered(4.0, 4, 4), 4, 4), 4, 4).unwrap();
    assert!((clip.depth.at(0, 2, 2) - 1.0).abs() < 1e-12);
}

#[test]
fn empty_scene_is_rejected() {
    let s = scene(vec![]);
    assert!(render_clip(&s, &single(Pose::identity(), Intrinsics::centered(4.0, 4, 4), 4, 4), 4, 4).is_err());
}

fn room() -> SceneSpec {
    scene(vec![
        sphere([0.4, 0.2, 4.0], 0.8),
        sphere([-1.0, 0.5, 5.5], 0.5),
        Primitive::Plane {
            center: Vector3::new(0.0, 1.0, 5.0),
            frame: axis_frame(1, false),
            extent: [6.0, 6.0],
            material: checker([0.6, 0.6, 0.5]),
        },
        Primitive::Plane {
            center: Vector3::new(0.0, 0.0, 8.0),
            frame: axis_frame(2, false),
            extent: [6.0, 3.0],
            material: checker([0.3, 0.5, 0.7]),
        },
    ])
}

fn moving_camera() -> CameraTrajectory {
    let k = Intrinsics::centered(24.0, 24, 24);
    let params = TrajectoryParams::orbit(Vector3::new(0.0, 0.3, 5.0), 5.0, 0.2, -5.0, 25.0);
    make_trajectory(&params, 3, k, 24, 24).unwrap()
}

#[test]
fn rigid_transform_invariance() {
    let s = room();
    let traj = moving_camera();
    let a = render_clip(&s, &traj, 24, 24).unwrap();
    let g = Pose::new(
        *Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, 1.0, -0.2)), 0.7).matrix(),
        Vector3::new(2.5, -1.0, 0.75),
    )
    .unwrap();
    let moved = traj.with_poses(traj.poses().iter().map(|p| g.compose(p)).collect()).unwrap();
    let b = render_clip(&s.transformed(&g), &moved, 24, 24).unwrap();
    let max_rgb = a.rgb.data.iter().zip(&b.rgb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let max_d = a.depth.data.iter().zip(&b.depth.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(max_rgb < 1e-6, "rgb diff {max_rgb}");
    assert!(max_d < 1e-6, "depth diff {max_d}");
}

fn on_surface(s: &SceneSpec, p: &Vector3<f64>) -> bool {
    s.primitives.iter().any(|prim| match prim {
        Primitive::Sphere { center, radius, .. } => ((p - center).norm() - radius).abs() < 1e-9,
        Primitive::Plane { center, frame, .. } => (p - center).dot(&frame.column(2)).abs() < 1e-9,
    })
}

#[test]
fn depth_reprojects_onto_its_pixel() {
    let s = room();
    let traj = moving_camera();
    let clip = render_clip(&s, &traj, 24, 24).unwrap();
    for (t, pose) in traj.poses().iter().enumerate() {
        let k = traj.intrinsics_at(t);
        for j in 0..24 {
            for i in 0..24 {
                let z = clip.depth.at(t, j, i);
                if z == FAR_PLANE {
                    continue;
                }
                assert!(z > 0.0);
                let cam = Vector3::new((i as f64 - k.cx) / k.fx * z, (j as f64 - k.cy) / k.fy * z, z);
                let world = pose.transform_point(&cam);
                assert!(on_surface(&s, &world));
                let (u, v) = k.project(&pose.inverse().transform_point(&world));
                assert!((u - i as f64).abs() < 0.5 && (v - j as f64).abs() < 0.5);
            }
        }
    }
}

/// Smallest positive root of `|o + s·d − c|² = r²` for an unnormalized `d`
/// whose camera-frame z component is 1, so `s` is the camera-frame depth.
fn brute_depth(o: Vector3<f64>, d: Vector3<f64>, c: Vector3<f64>, r: f64) -> Option<f64> {
    let a = d.dot(&d);
    let b = 2.0 * d.dot(&(o - c));
    let cc = (o - c).dot(&(o - c)) - r * r;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let (s1, s2) = ((-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a));
    [s1, s2].into_iter().filter(|s| *s > 0.0).reduce(f64::min)
}

#[test]
fn sphere_depth_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let center = Vector3::new(0.3, -0.2, 4.0);
    let s = scene(vec![sphere([center.x, center.y, center.z], 1.3)]);
    let (w, h) = (40, 30);
    let k = Intrinsics::new(30.0, 28.0, 19.5, 15.25);
    let pose = Pose::look_at(Vector3::new(-0.5, 0.1, 0.2), center, -Vector3::y()).unwrap();
    let clip = render_clip(&s, &single(pose, k, w, h), h, w).unwrap();
    let mut hits = 0;
    for _ in 0..100 {
        let (i, j) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let d = pose.rotation() * Vector3::new((i as f64 - k.cx) / k.fx, (j as f64 - k.cy) / k.fy, 1.0);
        let got = clip.depth.at(0, j, i);
        match brute_depth(*pose.translation(), d, center, 1.3) {
            Some(z) => {
                hits += 1;
                assert!((got - z).abs() < 1e-9, "pixel ({i},{j}): {got} vs {z}");
            }
            None => assert_eq!(got, FAR_PLANE),
        }
    }
    assert!(hits > 20);
}

fn tree_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    make_dataset(&a, 16, 17, 64, 64, 5).unwrap();
    make_dataset(&b, 16, 17, 64, 64, 5).unwrap();
    let mut clips = 0;
    for e in fs::read_dir(&a).unwrap() {
        let p = e.unwrap().path();
        if !p.is_dir() {
            continue;
        }
        clips += 1;
        let names: Vec<String> = fs::read_dir(&p)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names.iter().filter(|n| n.starts_with("frame_")).count(), 17);
        assert_eq!(names.iter().filter(|n| n.starts_with("depth_")).count(), 17);
        assert_eq!(names.iter().filter(|n| *n == "trajectory.txt").count(), 1);
    }
    assert_eq!(clips, 16);
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    let loaded = load_dataset(&a).unwrap();
    assert_eq!(loaded.len(), 16);
    let kinds: std::collections::BTreeSet<_> = loaded.iter().map(|c| c.entry.kind.as_str()).collect();
    assert!(kinds.len() >= 2);
    let g = generate_clip(5, 3, 17, 64, 64).unwrap();
    let c = &loaded[3];
    assert_eq!(c.trajectory, g.clip.trajectory);
    let q = (c.entry.depth_max - c.entry.depth_min) / 65535.0;
    for (x, y) in c.depth.data.iter().zip(&g.clip.depth.data) {
        assert!((x - y).abs() <= q);
    }
    for (x, y) in c.rgb.data.iter().zip(&g.clip.rgb.data) {
        assert!((x - y).abs() <= 1.0 / 255.0 + 1e-12);
    }
}

#[test]
fn dataset_needs_existing_parent() {
    let dir = tempfile::tempdir().unwrap();
    let err = make_dataset(&dir.path().join("missing/child"), 1, 5, 16, 16, 0).unwrap_err();
    assert!(err.to_string().contains("missing"));
    assert!(make_dataset(&dir.path().join("x"), 1, 4, 16, 16, 0).is_err());
}
