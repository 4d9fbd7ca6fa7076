//! Denoising timestep schedules and stage labels.

use std::fmt;

use crate::error::{Error, Result};

/// Upper bound of the late stage.
pub const LATE_END: f64 = 0.75;
/// Upper bound of the mid stage.
pub const MID_END: f64 = 0.9;

/// Minimal perturbation used to separate coinciding timesteps.
const SEPARATION: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Early,
    Mid,
    Late,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Early, Stage::Mid, Stage::Late];

    /// Early iff `t > 0.9`, mid iff `0.75 < t ≤ 0.9`, late otherwise.
    pub fn of(t: f64) -> Stage {
        if t > MID_END {
            Stage::Early
        } else if t > LATE_END {
            Stage::Mid
        } else {
            Stage::Late
        }
    }

    /// The half-open interval `(lo, hi]` covered by the stage.
    pub fn interval(self) -> (f64, f64) {
        match self {
            Stage::Early => (MID_END, 1.0),
            Stage::Mid => (LATE_END, MID_END),
            Stage::Late => (0.0, LATE_END),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Early => "early",
            Stage::Mid => "mid",
            Stage::Late => "late",
        }
    }

    /// Parses `early`, `mid`, `late`; `none` gives `None`.
    pub fn parse_choice(s: &str) -> Result<Option<Stage>> {
        match s {
            "early" => Ok(Some(Stage::Early)),
            "mid" => Ok(Some(Stage::Mid)),
            "late" => Ok(Some(Stage::Late)),
            "none" => Ok(None),
            other => Err(Error::Config(format!(
                "unknown stage '{other}' (expected early, mid, late or none)"
            ))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strictly decreasing timesteps in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepSchedule {
    timesteps: Vec<f64>,
}

impl TimestepSchedule {
    pub fn new(timesteps: Vec<f64>) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        for (k, &t) in timesteps.iter().enumerate() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("timestep {k} = {t} outside (0, 1]")));
            }
            if k > 0 && t >= timesteps[k - 1] {
                return Err(Error::Config(format!(
                    "timesteps must strictly decrease (index {k}: {} then {t})",
                    timesteps[k - 1]
                )));
            }
        }
        Ok(Self { timesteps })
    }

    /// `t_k = 1 − k/n` for `k = 0..n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("schedule needs at least one timestep".into()));
        }
        Self::new((0..n).map(|k| 1.0 - k as f64 / n as f64).collect())
    }

    pub fn timesteps(&self) -> &[f64] {
        &self.timesteps
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn stages(&self) -> Vec<Stage> {
        self.timesteps.iter().map(|&t| Stage::of(t)).collect()
    }

    /// Number of timesteps in early, mid and late.
    pub fn stage_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for s in self.stages() {
            c[s as usize] += 1;
        }
        c
    }

    /// One line per timestep: `index,t,stage`, with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,t,stage\n");
        for (k, &t) in self.timesteps.iter().enumerate() {
            s.push_str(&format!("{k},{t:?},{}\n", Stage::of(t)));
        }
        s
    }
}

/// `k` points `hi − i·(hi − lo)/k`, `i = 0..k`, all inside `(lo, hi]`.
fn spaced(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..k).map(|i| hi - i as f64 * (hi - lo) / k as f64).collect()
}

/// `base/3` linearly spaced timesteps per stage; the stage named by `extra`
/// instead receives `base/3 + delta` points spread over the same interval.
pub fn build_timestep_schedule(base: usize, delta: usize, extra: Option<Stage>) -> Result<TimestepSchedule> {
    if base == 0 || !base.is_multiple_of(3) {
        return Err(Error::Config(format!("base step count {base} must be a positive multiple of 3")));
    }
    let per = base / 3;
    let mut ts = Vec::with_capacity(base + delta);
    for stage in Stage::ALL {
        let (lo, hi) = stage.interval();
        let k = if extra == Some(stage) { per + delta } else { per };
        ts.extend(spaced(lo, hi, k));
    }
    ts.sort_by(|a, b| b.total_cmp(a));
    for k in 1..ts.len() {
        if ts[k] >= ts[k - 1] {
            ts[k] = ts[k - 1] - SEPARATION;
        }
    }
    ts.sort_by(|a, b| b.total_cmp(a));
    TimestepSchedule::new(ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_boundaries() {
        assert_eq!(Stage::of(1.0), Stage::Early);
        assert_eq!(Stage::of(0.900_000_1), Stage::Early);
        assert_eq!(Stage::of(0.9), Stage::Mid);
        assert_eq!(Stage::of(0.75), Stage::Late);
        assert_eq!(Stage::of(0.750_000_1), Stage::Mid);
        assert_eq!(Stage::of(1e-12), Stage::Late);
    }

    #[test]
    fn base_fifteen() {
        let s = build_timestep_schedule(15, 0, None).unwrap();
        assert_eq!(s.len(), 15);
        assert_eq!(s.stage_counts(), [5, 5, 5]);
        assert_eq!(s.timesteps()[0], 1.0);
        let s = build_timestep_schedule(15, 5, Some(Stage::Early)).unwrap();
        assert_eq!(s.stage_counts(), [10, 5, 5]);
        let s = build_timestep_schedule(15, 10, Some(Stage::Late)).unwrap();
        assert_eq!(s.stage_counts(), [5, 5, 15]);
    }

    #[test]
    fn zero_delta_ignores_stage() {
        let a = build_timestep_schedule(15, 0, None).unwrap();
        for st in Stage::ALL {
            assert_eq!(build_timestep_schedule(15, 0, Some(st)).unwrap(), a);
        }
    }

    #[test]
    fn bad_base() {
        assert!(build_timestep_schedule(14, 0, None).is_err());
        assert!(build_timestep_schedule(0, 0, None).is_err());
    }

    #[test]
    fn uniform_and_validation() {
        let u = TimestepSchedule::uniform(50).unwrap();
        assert_eq!(u.len(), 50);
        assert_eq!(u.timesteps()[0], 1.0);
        assert!((u.timesteps()[49] - 0.02).abs() < 1e-15);
        assert!(TimestepSchedule::new(vec![0.5, 0.5]).is_err());
        assert!(TimestepSchedule::new(vec![1.0, 0.0]).is_err());
        assert!(TimestepSchedule::new(vec![]).is_err());
    }

    #[test]
    fn parse_choice() {
        assert_eq!(Stage::parse_choice("mid").unwrap(), Some(Stage::Mid));
        assert_eq!(Stage::parse_choice("none").unwrap(), None);
        assert!(Stage::parse_choice("middle").is_err());
    }
}
