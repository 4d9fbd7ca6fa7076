//! Two-stage trainer: decoupled branches first, then cross-branch fusion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;

use super::data::TrainingExample;
use super::flow::{flow_match_targets, mse, mse_grad, Losses};
use super::optim::{Adam, AdamConfig};
use crate::codec::LatentTensor;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, DualDit, SigmaSchedule};
use crate::rng;

const TAG_BATCH: u64 = 0xBA7C;
const TAG_EVAL: u64 = 0xE7A1;
const TAG_FUSION_INIT: u64 = 0xF051;

/// Timesteps of the fixed evaluation batch.
pub const EVAL_TIMESTEPS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    /// γ = 0, no fusion parameters exist.
    Decoupled,
    /// γ = 1, fusion blocks added and everything trainable.
    Fusion,
}

impl TrainStage {
    pub fn number(self) -> u64 {
        match self {
            TrainStage::Decoupled => 1,
            TrainStage::Fusion => 2,
        }
    }

    pub fn from_number(n: u64) -> Result<Self> {
        match n {
            1 => Ok(TrainStage::Decoupled),
            2 => Ok(TrainStage::Fusion),
            _ => Err(Error::Config(format!("stage must be 1 or 2, got {n}"))),
        }
    }

    pub fn gamma(self) -> bool {
        self == TrainStage::Fusion
    }
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Depth-loss weight.
    pub lambda: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
            stage1_steps: 500,
            stage2_steps: 500,
        }
    }
}

impl TrainConfig {
    /// The learning rate used for the full-size backbone.
    pub const LARGE_MODEL_LR: f64 = 3e-6;

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.adam.validate()
    }

    pub fn steps(&self, stage: TrainStage) -> usize {
        match stage {
            TrainStage::Decoupled => self.stage1_steps,
            TrainStage::Fusion => self.stage2_steps,
        }
    }
}

/// One training step as logged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean sampled timestep over the batch.
    pub t: f64,
    pub l_rgb: f64,
    pub l_d: f64,
    pub l_total: f64,
    pub stage: TrainStage,
}

pub const LOG_HEADER: &str = "step,t,L_rgb,L_d,L_total,stage";

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{}",
            self.step, self.t, self.l_rgb, self.l_d, self.l_total, self.stage
        )
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// One drawn training sample.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub index: usize,
    pub t: f64,
    pub eps_rgb: LatentTensor,
    pub eps_depth: LatentTensor,
}

/// The batch for `(seed, stage, step)`: clip indices drawn with replacement,
/// `t = 1 − u` with `u ~ U[0, 1)`, and independent noise per branch.
pub fn draw_batch(
    data: &[TrainingExample],
    cfg: &TrainConfig,
    stage: TrainStage,
    step: usize,
) -> Result<Vec<BatchItem>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mut r = rng::stream(cfg.seed, &[TAG_BATCH, stage.number(), step as u64]);
    Ok((0..cfg.batch_size)
        .map(|_| {
            let index = r.gen_range(0..data.len());
            let t = 1.0 - r.gen::<f64>();
            let (f, c, h, w) = data[index].z0_rgb.dims();
            let eps_rgb = LatentTensor::randn(f, c, h, w, &mut r);
            let eps_depth = LatentTensor::randn(f, c, h, w, &mut r);
            BatchItem {
                index,
                t,
                eps_rgb,
                eps_depth,
            }
        })
        .collect())
}

/// Loss of one sample; adds gradients into `grad` (scaled by `weight`) when given.
fn sample_loss(
    model: &DualDit,
    ex: &TrainingExample,
    item: &BatchItem,
    gamma: bool,
    lambda: f64,
    grad: Option<(&mut DualDit, f64)>,
) -> Result<Losses> {
    let rgb = flow_match_targets(&ex.z0_rgb, &item.eps_rgb, item.t)?;
    let depth = flow_match_targets(&ex.z0_depth, &item.eps_depth, item.t)?;
    let input = ex.input(rgb.z_t, depth.z_t, item.t);
    let (out, cache) = model.forward(&input, gamma)?;
    let l_rgb = mse(&out.v_rgb, &rgb.v)?;
    let l_d = match &out.v_depth {
        Some(vd) => mse(vd, &depth.v)?,
        None => 0.0,
    };
    if let Some((g, weight)) = grad {
        let dv_rgb = mse_grad(&out.v_rgb, &rgb.v, weight);
        let dv_d = out.v_depth.as_ref().map(|vd| mse_grad(vd, &depth.v, weight * lambda));
        model.backward(&input, &cache, &dv_rgb, dv_d.as_ref(), g)?;
    }
    Ok(Losses {
        rgb: l_rgb,
        depth: l_d,
        total: l_rgb + lambda * l_d,
    })
}

fn mean_losses(parts: &[Losses]) -> Losses {
    let n = parts.len().max(1) as f64;
    let mut m = Losses::default();
    for p in parts {
        m.rgb += p.rgb;
        m.depth += p.depth;
        m.total += p.total;
    }
    Losses {
        rgb: m.rgb / n,
        depth: m.depth / n,
        total: m.total / n,
    }
}

/// Loss of the batch for `(stage, step)` without updating anything.
pub fn batch_loss(
    model: &DualDit,
    data: &[TrainingExample],
    cfg: &TrainConfig,
    stage: TrainStage,
    step: usize,
    gamma: bool,
) -> Result<Losses> {
    let batch = draw_batch(data, cfg, stage, step)?;
    let parts = batch
        .iter()
        .map(|b| sample_loss(model, &data[b.index], b, gamma, cfg.lambda, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_losses(&parts))
}

/// Mean loss over every clip at each of [`EVAL_TIMESTEPS`], with noise fixed by `seed`.
pub fn evaluation_loss(model: &DualDit, data: &[TrainingExample], seed: u64, gamma: bool, lambda: f64) -> Result<Losses> {
    let mut parts = Vec::new();
    for (i, ex) in data.iter().enumerate() {
        for (j, &t) in EVAL_TIMESTEPS.iter().enumerate() {
            let mut r = rng::stream(seed, &[TAG_EVAL, i as u64, j as u64]);
            let (f, c, h, w) = ex.z0_rgb.dims();
            let item = BatchItem {
                index: i,
                t,
                eps_rgb: LatentTensor::randn(f, c, h, w, &mut r),
                eps_depth: LatentTensor::randn(f, c, h, w, &mut r),
            };
            parts.push(sample_loss(model, ex, &item, gamma, lambda, None)?);
        }
    }
    Ok(mean_losses(&parts))
}

/// Stage-2 starting point: the stage-1 model plus zero-initialized fusion blocks.
pub fn begin_fusion_stage(stage1: &DualDit, schedule: &SigmaSchedule, seed: u64) -> Result<DualDit> {
    if stage1.has_fusion() {
        return Err(Error::Config("model already has fusion blocks".into()));
    }
    let mut m = stage1.clone();
    m.enable_fusion(schedule, &mut rng::stream(seed, &[TAG_FUSION_INIT]))?;
    Ok(m)
}

/// Model, optimizer and position within a stage.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: DualDit,
    pub optimizer: Adam,
    pub stage: TrainStage,
    pub next_step: usize,
}

impl TrainState {
    /// Fresh optimizer state at step 0. The decoupled stage refuses models
    /// with fusion blocks; the fusion stage requires them.
    pub fn new(model: DualDit, cfg: &TrainConfig, stage: TrainStage) -> Result<Self> {
        cfg.validate()?;
        match stage {
            TrainStage::Decoupled if model.has_fusion() => {
                return Err(Error::Config("decoupled stage cannot train fusion parameters".into()))
            }
            TrainStage::Fusion if !model.has_fusion() => {
                return Err(Error::Config("fusion stage needs fusion blocks (start from a stage-1 model)".into()))
            }
            _ => {}
        }
        let optimizer = Adam::new(cfg.adam, &model);
        Ok(Self {
            model,
            optimizer,
            stage,
            next_step: 0,
        })
    }

    /// Runs one optimizer step and returns its log row.
    pub fn step(&mut self, data: &[TrainingExample], cfg: &TrainConfig) -> Result<LogRow> {
        let step = self.next_step;
        let gamma = self.stage.gamma();
        let batch = draw_batch(data, cfg, self.stage, step)?;
        let mut grad = self.model.zeros_like();
        let weight = 1.0 / batch.len() as f64;
        let mut parts = Vec::with_capacity(batch.len());
        for b in &batch {
            parts.push(sample_loss(
                &self.model,
                &data[b.index],
                b,
                gamma,
                cfg.lambda,
                Some((&mut grad, weight)),
            )?);
        }
        let l = mean_losses(&parts);
        if !l.total.is_finite() {
            return Err(Error::Numeric(format!(
                "stage {} step {step}: non-finite loss (L_rgb={}, L_d={})",
                self.stage, l.rgb, l.depth
            )));
        }
        self.optimizer.update(&mut self.model, &grad)?;
        self.next_step += 1;
        Ok(LogRow {
            step,
            t: batch.iter().map(|b| b.t).sum::<f64>() * weight,
            l_rgb: l.rgb,
            l_d: l.depth,
            l_total: l.total,
            stage: self.stage,
        })
    }

    /// Writes model, optimizer moments and position.
    pub fn save(&self, path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
        let records = self.optimizer.records(&self.model);
        let refs: Vec<(String, &crate::tensor::Tensor)> = records.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut meta = meta.clone();
        meta.insert("train_stage".into(), self.stage.to_string());
        meta.insert("next_step".into(), self.next_step.to_string());
        meta.insert("adam_step".into(), self.optimizer.step.to_string());
        save_checkpoint(path, &self.model, &refs, &meta)
    }

    /// Restores a state written by [`TrainState::save`].
    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        let get = |k: &str| -> Result<u64> {
            ck.meta
                .extra
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("{} has no training state ('{k}')", path.display())))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad '{k}' in {}", path.display())))
        };
        let stage = TrainStage::from_number(get("train_stage")?)?;
        let next_step = get("next_step")? as usize;
        let optimizer = Adam::from_records(adam, get("adam_step")?, &ck.model, &ck.extra)?;
        Ok(Self {
            model: ck.model,
            optimizer,
            stage,
            next_step,
        })
    }
}

/// Runs `cfg.steps(stage)` steps from a fresh optimizer.
pub fn train_stage(
    model: DualDit,
    data: &[TrainingExample],
    cfg: &TrainConfig,
    stage: TrainStage,
) -> Result<(DualDit, Vec<LogRow>)> {
    let mut state = TrainState::new(model, cfg, stage)?;
    let mut log = Vec::with_capacity(cfg.steps(stage));
    for _ in 0..cfg.steps(stage) {
        log.push(state.step(data, cfg)?);
    }
    Ok((state.model, log))
}
