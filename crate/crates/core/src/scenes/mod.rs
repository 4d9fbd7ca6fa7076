//! Deterministic raycast scenes with ground-truth depth and cameras.

mod dataset;
mod geometry;
mod render;
mod trajectory;

pub use dataset::{
    format_manifest, generate_clip, load_dataset, make_dataset, parse_manifest, random_params, random_scene,
    read_trajectory_file, DatasetClip, GeneratedClip, ManifestEntry, MANIFEST_NAME, MAX_STRIDE, TRAJECTORY_NAME,
};
pub use geometry::{axis_frame, Hit, Material, Primitive};
pub use render::{render_clip, RenderedClip, SceneSpec, AMBIENT, DESCRIPTORS, FAR_PLANE};
pub use trajectory::{make_poses, make_trajectory, up, TrajectoryKind, TrajectoryParams};
