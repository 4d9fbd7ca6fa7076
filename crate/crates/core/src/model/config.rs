use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Size and shape of the dual-branch transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Number of (depthwise → pointwise) stages inside each fusion block.
    pub fusion_depth: usize,
    /// Latent channels `C′`.
    pub latent_channels: usize,
    /// Unshuffled ray channels `6·factor²` fed to the ray projection.
    pub ray_channels: usize,
    /// Size of the descriptor vocabulary used for text conditioning.
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_blocks: 15,
            hidden: 64,
            heads: 4,
            mlp_ratio: 4,
            fusion_depth: 2,
            latent_channels: 16,
            ray_channels: 6 * 64,
            vocab: 4,
        }
    }
}

impl ModelConfig {
    /// Small profile used by tests and the toy training runs.
    pub fn mini() -> Self {
        Self {
            num_blocks: 6,
            hidden: 32,
            ..Self::default()
        }
    }

    pub fn bottleneck(&self) -> usize {
        self.hidden / 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_blocks == 0 {
            return bad("num_blocks must be positive".into());
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(4) {
            return bad(format!("hidden {} must be a positive multiple of 4", self.hidden));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.mlp_ratio == 0 || self.fusion_depth == 0 {
            return bad("mlp_ratio and fusion_depth must be positive".into());
        }
        if self.latent_channels == 0 || self.ray_channels == 0 || self.vocab == 0 {
            return bad("latent_channels, ray_channels and vocab must be positive".into());
        }
        Ok(())
    }
}

/// Which layers (1-based) inject RGB features into the depth branch and
/// depth features into the RGB branch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigmaSchedule {
    pub rgb_to_depth: BTreeSet<usize>,
    pub depth_to_rgb: BTreeSet<usize>,
}

impl SigmaSchedule {
    pub fn new(
        rgb_to_depth: impl IntoIterator<Item = usize>,
        depth_to_rgb: impl IntoIterator<Item = usize>,
        num_blocks: usize,
    ) -> Result<Self> {
        let s = Self {
            rgb_to_depth: rgb_to_depth.into_iter().collect(),
            depth_to_rgb: depth_to_rgb.into_iter().collect(),
        };
        s.validate(num_blocks)?;
        Ok(s)
    }

    /// RGB → depth in layers 1–5 and depth → RGB in 6–15.
    pub fn default_for_15() -> Self {
        Self {
            rgb_to_depth: (1..=5).collect(),
            depth_to_rgb: (6..=15).collect(),
        }
    }

    /// The first third of the layers (rounded) send RGB into depth, the
    /// rest send depth into RGB. For 15 layers this is the 1–5 / 6–15 split.
    pub fn proportional(num_blocks: usize) -> Self {
        let split = ((num_blocks as f64) / 3.0).round().max(1.0) as usize;
        let split = split.min(num_blocks);
        Self {
            rgb_to_depth: (1..=split).collect(),
            depth_to_rgb: (split + 1..=num_blocks).collect(),
        }
    }

    pub fn empty() -> Self {
        Self {
            rgb_to_depth: BTreeSet::new(),
            depth_to_rgb: BTreeSet::new(),
        }
    }

    /// Checks the index range; overlapping sets are allowed with a warning.
    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        for &k in self.rgb_to_depth.iter().chain(&self.depth_to_rgb) {
            if k == 0 || k > num_blocks {
                return Err(Error::Config(format!(
                    "fusion layer {k} outside 1..={num_blocks}"
                )));
            }
        }
        if self.rgb_to_depth.intersection(&self.depth_to_rgb).next().is_some() {
            log::warn!("fusion schedule injects in both directions at the same layer");
        }
        Ok(())
    }

    /// Mirror image: the RGB and depth roles swapped.
    pub fn mirrored(&self) -> Self {
        Self {
            rgb_to_depth: self.depth_to_rgb.clone(),
            depth_to_rgb: self.rgb_to_depth.clone(),
        }
    }

    /// Parses `"1-5/6-15"`: RGB→depth ranges before the slash, depth→RGB
    /// after. Each side is a comma list of `a` or `a-b`; `-` alone is empty.
    pub fn parse(s: &str, num_blocks: usize) -> Result<Self> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("fusion schedule '{s}' needs a '/'")))?;
        let sched = Self {
            rgb_to_depth: parse_ranges(a)?,
            depth_to_rgb: parse_ranges(b)?,
        };
        sched.validate(num_blocks)?;
        Ok(sched)
    }
}

fn parse_ranges(s: &str) -> Result<BTreeSet<usize>> {
    let s = s.trim();
    let mut out = BTreeSet::new();
    if s.is_empty() || s == "-" {
        return Ok(out);
    }
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad layer index '{v}'")))
    };
    for part in s.split(',') {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(Error::Config(format!("empty layer range '{part}'")));
                }
                out.extend(lo..=hi);
            }
            None => {
                out.insert(num(part)?);
            }
        }
    }
    Ok(out)
}

fn fmt_ranges(set: &BTreeSet<usize>) -> String {
    let v: Vec<usize> = set.iter().copied().collect();
    if v.is_empty() {
        return "-".into();
    }
    let mut parts = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[j] + 1 {
            j += 1;
        }
        parts.push(if i == j {
            v[i].to_string()
        } else {
            format!("{}-{}", v[i], v[j])
        });
        i = j + 1;
    }
    parts.join(",")
}

impl fmt::Display for SigmaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", fmt_ranges(&self.rgb_to_depth), fmt_ranges(&self.depth_to_rgb))
    }
}
