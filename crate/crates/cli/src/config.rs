//! Run configuration: one TOML document with a section per module.

use std::fs;
use std::path::{Path, PathBuf};

use dualcam::codec::{CodecConfig, CodecMode};
use dualcam::diffusion::{AdamConfig, Stage, TrainConfig};
use dualcam::model::{ModelConfig, SigmaSchedule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub codec: CodecSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub analysis: AnalysisSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub root: PathBuf,
    pub clips: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    /// `shape_faithful` or `lossless`.
    pub mode: String,
    pub channels: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub fusion_depth: usize,
    pub vocab: usize,
    /// `false` trains the RGB branch alone (no depth, no fusion).
    pub depth_branch: bool,
    /// `proportional` or explicit layers such as `1-2/3-6`.
    pub fusion_layers: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Write an intermediate checkpoint every this many steps (0 = never).
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub base_steps: usize,
    pub delta: usize,
    /// `early`, `mid`, `late` or `none`.
    pub delta_stage: String,
    pub tag: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Clips of the dataset probed by the CKA report.
    pub cka_clips: usize,
    /// Timesteps (uniform per stage) probed by the CKA report.
    pub cka_steps: usize,
    /// Held-out clips rendered for the schedule sweep.
    pub eval_clips: usize,
    pub eval_seed: u64,
    pub deltas: Vec<usize>,
    pub seeds: Vec<u64>,
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            dataset: DatasetSection::default(),
            codec: CodecSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            clips: 16,
            frames: 17,
            height: 64,
            width: 64,
        }
    }
}

impl Default for CodecSection {
    fn default() -> Self {
        let c = CodecConfig::default();
        Self {
            mode: c.mode.as_str().into(),
            channels: c.channels,
            seed: c.seed,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::mini();
        Self {
            num_blocks: m.num_blocks,
            hidden: m.hidden,
            heads: m.heads,
            mlp_ratio: m.mlp_ratio,
            fusion_depth: m.fusion_depth,
            vocab: m.vocab,
            depth_branch: true,
            fusion_layers: "proportional".into(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lambda: t.lambda,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            stage1_steps: t.stage1_steps,
            stage2_steps: t.stage2_steps,
            checkpoint_every: 100,
        }
    }
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            base_steps: 15,
            delta: 0,
            delta_stage: "none".into(),
            tag: 0,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            cka_clips: 4,
            cka_steps: 15,
            eval_clips: 8,
            eval_seed: 7919,
            deltas: vec![0, 5, 10],
            seeds: vec![0, 1, 2],
            plots: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn codec_config(&self) -> Result<CodecConfig, CliError> {
        Ok(CodecConfig {
            mode: CodecMode::parse(&self.codec.mode)?,
            channels: self.codec.channels,
            seed: self.codec.seed,
        })
    }

    /// Latent channels implied by the codec section.
    pub fn latent_channels(&self) -> Result<usize, CliError> {
        let c = self.codec_config()?;
        Ok(match c.mode {
            CodecMode::Lossless => dualcam::codec::GROUP_CHANNELS,
            CodecMode::ShapeFaithful => c.channels,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let cfg = ModelConfig {
            num_blocks: m.num_blocks,
            hidden: m.hidden,
            heads: m.heads,
            mlp_ratio: m.mlp_ratio,
            fusion_depth: m.fusion_depth,
            latent_channels: self.latent_channels()?,
            ray_channels: ModelConfig::default().ray_channels,
            vocab: m.vocab,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sigma_schedule(&self) -> Result<SigmaSchedule, CliError> {
        match self.model.fusion_layers.as_str() {
            "proportional" => Ok(SigmaSchedule::proportional(self.model.num_blocks)),
            s => Ok(SigmaSchedule::parse(s, self.model.num_blocks)?),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            lambda: t.lambda,
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
            stage1_steps: t.stage1_steps,
            stage2_steps: t.stage2_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn delta_stage(&self) -> Result<Option<Stage>, CliError> {
        Ok(Stage::parse_choice(&self.sample.delta_stage)?)
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model_config()?;
        self.sigma_schedule()?;
        self.train_config()?;
        self.delta_stage()?;
        dualcam::codec::latent_frames(self.dataset.frames)?;
        if self.dataset.clips == 0 {
            return Err(CliError::usage("dataset.clips must be at least 1"));
        }
        if self.model.vocab < dualcam::scenes::DESCRIPTORS.len() {
            return Err(CliError::usage(format!(
                "model.vocab must cover the {} scene descriptors",
                dualcam::scenes::DESCRIPTORS.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("seeed = 3").is_err());
        assert!(RunConfig::parse("[train]\nsteps = 3").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::parse("seed = 5\n[train]\nlr = 0.01\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.batch_size, 8);
        assert_eq!(c.dataset, DatasetSection::default());
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut c = RunConfig::default();
        c.dataset.frames = 16;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.sample.delta_stage = "middle".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.fusion_layers = "1-9/".into();
        assert!(c.validate().is_err());
    }
}
