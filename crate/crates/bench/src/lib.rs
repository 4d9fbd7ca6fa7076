//! Shared inputs for the benchmarks: one rendered clip at the default
//! training resolution and a mini-profile model with fusion enabled.

use dualcam::codec::{CodecConfig, LatentCodec};
use dualcam::diffusion::{prepare_example, TrainingExample};
use dualcam::model::{DualDit, ModelConfig, Params, SigmaSchedule};
use dualcam::scenes::{generate_clip, RenderedClip};
use dualcam::tensor::Tensor;

pub const FRAMES: usize = 17;
pub const SIZE: usize = 64;

pub struct Fixture {
    pub clip: RenderedClip,
    pub codec: LatentCodec,
    pub example: TrainingExample,
    pub model: DualDit,
}

impl Fixture {
    pub fn new() -> Self {
        let clip = generate_clip(0, 0, FRAMES, SIZE, SIZE).expect("clip").clip;
        let codec = LatentCodec::new(CodecConfig::default()).expect("codec");
        let example = prepare_example(&codec, &clip.rgb, &clip.depth, &clip.trajectory, clip.tag).expect("example");
        let cfg = ModelConfig::mini();
        let mut rng = dualcam::rng::stream(0, &[7]);
        let mut model = DualDit::new(cfg.clone(), &mut rng).expect("model");
        model
            .enable_fusion(&SigmaSchedule::proportional(cfg.num_blocks), &mut rng)
            .expect("fusion");
        // random weights: the zero-initialized output maps would make every output zero
        model.visit_mut("", &mut |_, t| *t = Tensor::randn(t.shape(), 0.05, &mut rng));
        Self {
            clip,
            codec,
            example,
            model,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
