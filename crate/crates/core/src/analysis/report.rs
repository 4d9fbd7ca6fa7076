//! CKA-versus-stage curves over a denoising schedule.

use super::probe::{layer_cka, probe_activations, ProbeTarget};
use crate::diffusion::{Stage, TimestepSchedule, TrainingExample};
use crate::error::{Error, Result};
use crate::model::DualDit;

pub const CKA_HEADER: &str = "stage,layer,t,cka_mean,cka_var";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Branch {
    Rgb,
    Depth,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Rgb => "rgb",
            Branch::Depth => "depth",
        }
    }
}

/// One row: a layer at one timestep, or (`t = None`) pooled over a stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CkaRow {
    pub stage: Stage,
    pub layer: usize,
    pub t: Option<f64>,
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkaCurve {
    pub branch: Branch,
    pub target: ProbeTarget,
    pub rows: Vec<CkaRow>,
}

impl CkaCurve {
    /// File stem such as `cka_rgb_ray`.
    pub fn name(&self) -> String {
        format!("cka_{}_{}", self.branch.as_str(), self.target.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CKA_HEADER);
        s.push('\n');
        for r in &self.rows {
            let t = r.t.map(|t| format!("{t:?}")).unwrap_or_else(|| "all".into());
            s.push_str(&format!("{},{},{},{:?},{:?}\n", r.stage, r.layer, t, r.mean, r.var));
        }
        s
    }

    /// Pooled per-stage means for one layer, in early/mid/late order.
    pub fn stage_means(&self, layer: usize) -> Vec<(Stage, f64)> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer && r.t.is_none())
            .map(|r| (r.stage, r.mean))
            .collect()
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Probes every clip at every schedule timestep and reports, per branch and
/// target, the per-timestep mean/variance over clips and the pooled
/// per-stage statistics.
///
/// Inputs are the clips noised along the straight path with noise fixed by
/// `seed` (clip `i` uses `seed + i`); every token position is one row.
pub fn cka_vs_stage_report(
    model: &DualDit,
    examples: &[TrainingExample],
    schedule: &TimestepSchedule,
    seed: u64,
) -> Result<Vec<CkaCurve>> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("CKA report needs at least one clip".into()));
    }
    let gamma = model.has_fusion();
    let mut keys = vec![(Branch::Rgb, ProbeTarget::RayLatent), (Branch::Rgb, ProbeTarget::DepthLatent)];
    if model.depth.is_some() {
        keys.push((Branch::Depth, ProbeTarget::RayLatent));
    }
    let n = model.config.num_blocks;
    // key -> timestep -> layer -> values over clips
    let mut values = vec![vec![vec![Vec::new(); n]; schedule.len()]; keys.len()];
    for (ti, &t) in schedule.timesteps().iter().enumerate() {
        for (ci, ex) in examples.iter().enumerate() {
            let probe = probe_activations(model, ex, t, seed.wrapping_add(ci as u64), gamma)?;
            for (ki, &(branch, target)) in keys.iter().enumerate() {
                let layers = match branch {
                    Branch::Rgb => &probe.rgb,
                    Branch::Depth => &probe.depth,
                };
                let cka = layer_cka(layers, probe.target(target))?;
                for (l, v) in cka.into_iter().enumerate() {
                    values[ki][ti][l].push(v);
                }
            }
        }
    }
    let stages = schedule.stages();
    let mut curves = Vec::new();
    for (ki, &(branch, target)) in keys.iter().enumerate() {
        let v = &values[ki];
        let mut rows = Vec::new();
        for stage in Stage::ALL {
            let idx: Vec<usize> = (0..schedule.len()).filter(|&i| stages[i] == stage).collect();
            if idx.is_empty() {
                continue;
            }
            for layer in 0..n {
                for &i in &idx {
                    let (mean, var) = mean_var(&v[i][layer]);
                    rows.push(CkaRow {
                        stage,
                        layer: layer + 1,
                        t: Some(schedule.timesteps()[i]),
                        mean,
                        var,
                    });
                }
                let pooled: Vec<f64> = idx.iter().flat_map(|&i| v[i][layer].iter().copied()).collect();
                let (mean, var) = mean_var(&pooled);
                rows.push(CkaRow {
                    stage,
                    layer: layer + 1,
                    t: None,
                    mean,
                    var,
                });
            }
        }
        curves.push(CkaCurve { branch, target, rows });
    }
    Ok(curves)
}

/// Plain-text description of how the report was computed.
pub fn cka_report_notes(schedule: &TimestepSchedule, clips: usize, seed: u64) -> String {
    format!(
        "linear CKA between block outputs and probe targets\n\
         rows: one per latent token position (t, y, x) of a single clip\n\
         inputs: clips noised on the straight path to each schedule timestep, noise seed {seed} + clip index\n\
         clips: {clips}; statistics are mean and population variance of per-clip CKA\n\
         rows with t = all pool every timestep of the stage\n\
         schedule: {} timesteps\n",
        schedule.len()
    )
}
