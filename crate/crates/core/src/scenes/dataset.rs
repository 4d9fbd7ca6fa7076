//! Seeded scene and trajectory generation and the on-disk dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::geometry::{axis_frame, Material, Primitive};
use super::render::{render_clip, RenderedClip, SceneSpec, DESCRIPTORS};
use super::trajectory::{make_trajectory, up, TrajectoryKind, TrajectoryParams};
use crate::camera::{parse_trajectory, serialize_trajectory, CameraTrajectory, Intrinsics, Pose};
use crate::codec::{read_depth_frames, read_rgb_frames, write_depth_frames, write_rgb_frames};
use crate::codec::{latent_frames, DepthVideo, VideoTensor};
use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const TRAJECTORY_NAME: &str = "trajectory.txt";
pub const MAX_STRIDE: usize = 4;
const MANIFEST_HEADER: &str =
    "# id frames height width kind stride descriptor depth_min depth_max (depth = camera-frame z)";

const TAG_SCENE: u64 = 0x5CE7E;

fn material(r: &mut ChaCha8Rng, checker: (f64, f64)) -> Material {
    Material {
        albedo: [r.gen_range(0.2..0.95), r.gen_range(0.2..0.95), r.gen_range(0.2..0.95)],
        checker: r.gen_range(checker.0..checker.1),
    }
}

fn random_rotation(r: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    *Rotation3::from_axis_angle(&Unit::new_normalize(axis), r.gen_range(0.0..std::f64::consts::TAU)).matrix()
}

fn plane(center: [f64; 3], axis: usize, positive: bool, extent: [f64; 2], m: Material) -> Primitive {
    Primitive::Plane {
        center: Vector3::from(center),
        frame: axis_frame(axis, positive),
        extent,
        material: m,
    }
}

fn sphere(r: &mut ChaCha8Rng, x: f64, z: f64) -> Primitive {
    let radius = r.gen_range(0.4..0.9);
    Primitive::Sphere {
        center: Vector3::new(x, 1.0 - radius, z),
        radius,
        frame: random_rotation(r),
        material: material(r, (0.25, 0.6)),
    }
}

/// A random scene whose layout follows its descriptor tag.
pub fn random_scene(r: &mut ChaCha8Rng) -> SceneSpec {
    let tag = r.gen_range(0..DESCRIPTORS.len());
    let floor = plane([0.0, 1.0, 5.0], 1, false, [8.0, 8.0], material(r, (0.6, 1.0)));
    let mut primitives = vec![floor];
    let background;
    match tag {
        0 => {
            primitives.push(plane([0.0, -1.0, 9.0], 2, false, [8.0, 3.0], material(r, (0.6, 1.0))));
            for _ in 0..r.gen_range(2..4) {
                let (x, z) = (r.gen_range(-1.5..1.5), r.gen_range(3.5..7.0));
                primitives.push(sphere(r, x, z));
            }
            background = [0.15, 0.15, 0.2];
        }
        1 => {
            for _ in 0..r.gen_range(3..6) {
                let (x, z) = (r.gen_range(-2.5..2.5), r.gen_range(3.5..8.0));
                primitives.push(sphere(r, x, z));
            }
            background = [0.55, 0.7, 0.9];
        }
        2 => {
            primitives.push(plane([0.0, -1.0, 7.5], 2, false, [8.0, 3.0], material(r, (0.6, 1.0))));
            let z = r.gen_range(4.5..6.0);
            for x in [-1.6, 0.0, 1.6] {
                let jitter = r.gen_range(-0.2..0.2);
                primitives.push(sphere(r, x + jitter, z));
            }
            background = [0.3, 0.25, 0.2];
        }
        _ => {
            primitives.push(plane([-2.0, 0.0, 5.0], 0, true, [2.0, 8.0], material(r, (0.6, 1.0))));
            primitives.push(plane([2.0, 0.0, 5.0], 0, false, [2.0, 8.0], material(r, (0.6, 1.0))));
            primitives.push(plane([0.0, 0.0, 12.0], 2, false, [2.0, 2.0], material(r, (0.6, 1.0))));
            for _ in 0..r.gen_range(1..3) {
                let (x, z) = (r.gen_range(-1.0..1.0), r.gen_range(3.5..8.0));
                primitives.push(sphere(r, x, z));
            }
            background = [0.05, 0.05, 0.05];
        }
    }
    let light = Vector3::new(r.gen_range(-0.6..0.6), -1.0, r.gen_range(-0.8..-0.2));
    SceneSpec {
        primitives,
        light,
        background,
        tag,
    }
}

fn signed(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = r.gen_range(lo..hi);
    if r.gen::<bool>() {
        v
    } else {
        -v
    }
}

/// Random path parameters of the given kind, scaled for a clip of `base_frames`.
pub fn random_params(r: &mut ChaCha8Rng, kind: TrajectoryKind, base_frames: usize) -> TrajectoryParams {
    let per_frame = |r: &mut ChaCha8Rng| signed(r, 1.0, 2.5) / base_frames as f64;
    match kind {
        TrajectoryKind::Orbit => TrajectoryParams::orbit(
            Vector3::new(0.0, 0.3, 5.0),
            5.0,
            r.gen_range(-0.3..0.3),
            r.gen_range(-10.0..10.0),
            signed(r, 15.0, 40.0),
        ),
        TrajectoryKind::Pan => TrajectoryParams::linear(kind, start_pose(r), signed(r, 15.0, 35.0)),
        TrajectoryKind::Dolly | TrajectoryKind::Truck => {
            TrajectoryParams::linear(kind, start_pose(r), per_frame(r))
        }
    }
}

fn start_pose(r: &mut ChaCha8Rng) -> Pose {
    let eye = Vector3::new(r.gen_range(-0.5..0.5), r.gen_range(-0.3..0.2), r.gen_range(-0.5..0.5));
    let target = Vector3::new(r.gen_range(-1.0..1.0), 0.3, 5.0);
    Pose::look_at(eye, target, up()).expect("target is in front of the eye")
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub kind: TrajectoryKind,
    pub stride: usize,
    pub descriptor: usize,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl ManifestEntry {
    fn line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {:?} {:?}",
            self.id,
            self.frames,
            self.height,
            self.width,
            self.kind.as_str(),
            self.stride,
            DESCRIPTORS[self.descriptor],
            self.depth_min,
            self.depth_max
        )
    }

    fn parse(line: &str, n: usize) -> Result<Self> {
        let bad = |msg: String| Error::Parse { line: n, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(bad(format!("expected 9 fields, got {}", f.len())));
        }
        let num = |i: usize| f[i].parse::<usize>().map_err(|e| bad(format!("field {}: {e}", i + 1)));
        let real = |i: usize| f[i].parse::<f64>().map_err(|e| bad(format!("field {}: {e}", i + 1)));
        Ok(Self {
            id: f[0].to_string(),
            frames: num(1)?,
            height: num(2)?,
            width: num(3)?,
            kind: TrajectoryKind::parse(f[4]).map_err(|e| bad(e.to_string()))?,
            stride: num(5)?,
            descriptor: DESCRIPTORS
                .iter()
                .position(|d| *d == f[6])
                .ok_or_else(|| bad(format!("unknown descriptor '{}'", f[6])))?,
            depth_min: real(7)?,
            depth_max: real(8)?,
        })
    }
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for e in entries {
        s.push_str(&e.line());
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| ManifestEntry::parse(l, i + 1))
        .collect()
}

/// A generated clip plus how it was made.
#[derive(Clone, Debug)]
pub struct GeneratedClip {
    pub clip: RenderedClip,
    pub kind: TrajectoryKind,
    pub stride: usize,
}

/// Deterministically generates clip `index` of the dataset for `seed`.
pub fn generate_clip(seed: u64, index: usize, frames: usize, height: usize, width: usize) -> Result<GeneratedClip> {
    let mut r = rng::stream(seed, &[TAG_SCENE, index as u64]);
    let scene = random_scene(&mut r);
    let kind = TrajectoryKind::ALL[r.gen_range(0..TrajectoryKind::ALL.len())];
    let stride = r.gen_range(1..=MAX_STRIDE);
    let base = (frames - 1) * stride + 1;
    let params = random_params(&mut r, kind, base);
    let k = Intrinsics::centered(width as f64, width, height);
    let traj = make_trajectory(&params, base.max(2), k, width, height)?.subsample(stride, frames)?;
    Ok(GeneratedClip {
        clip: render_clip(&scene, &traj, height, width)?,
        kind,
        stride,
    })
}

/// Renders `n_clips` clips under `root` and writes the manifest.
///
/// Layout: `<root>/clip_%04d/frame_%04d.png`, `depth_%04d.png` (16-bit, scaled
/// to the per-clip range in the manifest) and `trajectory.txt`.
pub fn make_dataset(root: &Path, n_clips: usize, frames: usize, height: usize, width: usize, seed: u64) -> Result<PathBuf> {
    if n_clips == 0 {
        return Err(Error::Config("dataset needs at least one clip".into()));
    }
    latent_frames(frames)?;
    if frames < 2 {
        return Err(Error::Config("clips need at least 2 frames".into()));
    }
    if let Some(parent) = root.parent().filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(Error::io(
                parent,
                std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
            ));
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let g = generate_clip(seed, i, frames, height, width)?;
        let id = format!("clip_{i:04}");
        let dir = root.join(&id);
        write_rgb_frames(&dir, "frame", &g.clip.rgb)?;
        let (lo, hi) = write_depth_frames(&dir, "depth", &g.clip.depth)?;
        let tp = dir.join(TRAJECTORY_NAME);
        fs::write(&tp, serialize_trajectory(&g.clip.trajectory)).map_err(|e| Error::io(&tp, e))?;
        entries.push(ManifestEntry {
            id,
            frames,
            height,
            width,
            kind: g.kind,
            stride: g.stride,
            descriptor: g.clip.tag,
            depth_min: lo,
            depth_max: hi,
        });
    }
    let path = root.join(MANIFEST_NAME);
    fs::write(&path, format_manifest(&entries)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// A clip read back from disk.
#[derive(Clone, Debug)]
pub struct DatasetClip {
    pub entry: ManifestEntry,
    pub rgb: VideoTensor,
    pub depth: DepthVideo,
    pub trajectory: CameraTrajectory,
}

pub fn read_trajectory_file(path: &Path) -> Result<CameraTrajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text)
}

/// Loads every clip listed in `<root>/manifest.txt`.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetClip>> {
    let mpath = root.join(MANIFEST_NAME);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    parse_manifest(&text)?
        .into_iter()
        .map(|entry| {
            let dir = root.join(&entry.id);
            let rgb = read_rgb_frames(&dir, "frame", entry.frames)?;
            let depth = read_depth_frames(&dir, "depth", entry.frames, entry.depth_min, entry.depth_max)?;
            let trajectory = read_trajectory_file(&dir.join(TRAJECTORY_NAME))?;
            if trajectory.frame_count() != entry.frames {
                return Err(Error::shape(format!(
                    "{}: trajectory has {} poses, manifest says {}",
                    entry.id,
                    trajectory.frame_count(),
                    entry.frames
                )));
            }
            Ok(DatasetClip {
                entry,
                rgb,
                depth,
                trajectory,
            })
        })
        .collect()
}
