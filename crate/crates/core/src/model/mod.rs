//! The dual-branch diffusion transformer and its parameters.

mod block;
mod branch;
mod checkpoint;
mod config;
mod dual;
mod fusion;
pub mod gradcheck;
pub mod layers;
mod params;

pub use block::{BlockCache, DitBlock};
pub use branch::{Branch, TIME_SCALE};
pub use checkpoint::{
    decode_records, encode_records, load_checkpoint, save_checkpoint, sidecar_path, CheckpointMeta,
    LoadedCheckpoint, FORMAT_VERSION,
};
pub use config::{ModelConfig, SigmaSchedule};
pub use dual::{assemble_branch_input, DualDit, DualInput, DualOutput, ForwardCache, FusionSet};
pub use fusion::{FusionBlock, FusionCache, FusionStage};
pub use params::{Linear, Params};
