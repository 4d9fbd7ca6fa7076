pub mod analysis;
pub mod camera;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod model;
pub mod rng;
pub mod scenes;
pub mod tensor;

pub use error::{Error, Result};
