//! Camera poses, Plücker rays, trajectory files and pose-error metrics.

mod io;
mod metrics;
mod pose;
mod rays;

pub use io::{import_re10k, parse_trajectory, serialize_trajectory, PARSE_ROTATION_TOLERANCE};
pub use metrics::{rotation_error, translation_error};
pub use pose::{
    nearest_rotation, normalize_to_first_frame, rotation_angle, rotation_defect, CameraTrajectory,
    Intrinsics, IntrinsicsSet, Pose, ROTATION_TOLERANCE,
};
pub use rays::{
    downsample_rayfield, generate_plucker_rays, unshuffle_rays, RayField, RayLatent, RayProjection,
    RAY_FACTOR,
};
