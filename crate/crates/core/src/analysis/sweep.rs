//! Stage-allocation sweep: extra denoising steps in one stage at a time.

use super::generate::generate_video;
use super::pose::{pose_errors, AlignConfig};
use crate::camera::CameraTrajectory;
use crate::codec::{DepthVideo, LatentCodec, VideoTensor};
use crate::diffusion::{build_timestep_schedule, Stage, TimestepSchedule, TrainingExample};
use crate::error::{Error, Result};
use crate::model::DualDit;

pub const SWEEP_HEADER: &str = "stage,delta,seed,steps,re_deg,te,recon_mse";

/// A held-out clip: conditions plus ground truth for scoring.
#[derive(Clone, Debug)]
pub struct EvalClip {
    pub example: TrainingExample,
    pub rgb: VideoTensor,
    pub depth: DepthVideo,
    pub trajectory: CameraTrajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// `None` for the shared Δ = 0 schedule.
    pub stage: Option<Stage>,
    pub delta: usize,
    pub seed: u64,
    pub steps: usize,
    /// Means over clips.
    pub re: f64,
    pub te: f64,
    pub recon_mse: f64,
}

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{:?}",
            self.stage.map_or("none", |s| s.as_str()),
            self.delta,
            self.seed,
            self.steps,
            self.re,
            self.te,
            self.recon_mse
        )
    }
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

/// Distinct `(stage, Δ)` configurations; every Δ = 0 collapses to one.
pub fn sweep_configurations(deltas: &[usize], stages: &[Stage]) -> Vec<(Option<Stage>, usize)> {
    let mut out = Vec::new();
    if deltas.contains(&0) {
        out.push((None, 0));
    }
    let mut ds: Vec<usize> = deltas.iter().copied().filter(|&d| d > 0).collect();
    ds.sort_unstable();
    ds.dedup();
    let mut st = stages.to_vec();
    st.sort();
    st.dedup();
    for s in st {
        for &d in &ds {
            out.push((Some(s), d));
        }
    }
    out
}

/// Pixel mean squared error between two videos of equal shape.
pub fn video_mse(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    if a.data.len() != b.data.len() || a.frames != b.frames {
        return Err(Error::shape("videos differ in shape"));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64)
}

/// Scores one schedule over all clips for one seed (clip `i` samples with
/// `seed · 1000 + i`).
pub fn score_schedule(
    model: &DualDit,
    codec: &LatentCodec,
    clips: &[EvalClip],
    schedule: &TimestepSchedule,
    seed: u64,
    align: &AlignConfig,
) -> Result<(f64, f64, f64)> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one clip".into()));
    }
    let (mut re, mut te, mut mse) = (0.0, 0.0, 0.0);
    for (i, c) in clips.iter().enumerate() {
        let g = generate_video(model, codec, &c.example, schedule, seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        let (r, t) = pose_errors(&g.rgb, &c.depth, &c.rgb, &c.trajectory, align)?;
        re += r;
        te += t;
        mse += video_mse(&g.rgb, &c.rgb)?;
    }
    let n = clips.len() as f64;
    Ok((re / n, te / n, mse / n))
}

/// One row per configuration and seed, sorted by `(stage, Δ, seed)`.
pub fn stage_allocation_sweep(
    model: &DualDit,
    codec: &LatentCodec,
    clips: &[EvalClip],
    base: usize,
    deltas: &[usize],
    stages: &[Stage],
    seeds: &[u64],
    align: &AlignConfig,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (stage, delta) in sweep_configurations(deltas, stages) {
        let schedule = build_timestep_schedule(base, delta, stage)?;
        for &seed in seeds {
            let (re, te, recon_mse) = score_schedule(model, codec, clips, &schedule, seed, align)?;
            rows.push(SweepRow {
                stage,
                delta,
                seed,
                steps: schedule.len(),
                re,
                te,
                recon_mse,
            });
        }
    }
    rows.sort_by_key(|a| (a.stage, a.delta, a.seed));
    Ok(rows)
}
