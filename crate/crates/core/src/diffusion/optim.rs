//! Adaptive-moment optimizer over any [`Params`] container.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::Params;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moments, one tensor per parameter in visit order.
///
/// Parameters and moments are rounded to `f32` after every update so a
/// checkpoint stores the exact optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

impl Adam {
    pub fn new<P: Params>(config: AdamConfig, params: &P) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(t.zeros_like()));
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// One update `θ ← θ − lr·m̂/(√v̂ + eps)`.
    pub fn update<P: Params>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut g = Vec::with_capacity(self.m.len());
        grads.visit("", &mut |_, t| g.push(t.data().to_vec()));
        if g.len() != self.m.len() {
            return Err(Error::shape("gradient structure does not match the optimizer state"));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        let mut mismatch = false;
        params.visit_mut("", &mut |_, p| {
            let (mt, vt, gt) = (&mut m[idx], &mut v[idx], &g[idx]);
            idx += 1;
            if gt.len() != p.len() || mt.len() != p.len() {
                mismatch = true;
                return;
            }
            let (pd, md, vd) = (p.data_mut(), mt.data_mut(), vt.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gt[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gt[i] * gt[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.round_to_f32();
            mt.round_to_f32();
            vt.round_to_f32();
        });
        if mismatch {
            return Err(Error::shape("parameter and gradient sizes differ"));
        }
        Ok(())
    }

    /// Moments as named records for a checkpoint.
    pub fn records<P: Params>(&self, params: &P) -> Vec<(String, Tensor)> {
        let names = params.names();
        let mut out = Vec::with_capacity(2 * names.len());
        for (n, t) in names.iter().zip(&self.m) {
            out.push((format!("{M_PREFIX}{n}"), t.clone()));
        }
        for (n, t) in names.iter().zip(&self.v) {
            out.push((format!("{V_PREFIX}{n}"), t.clone()));
        }
        out
    }

    /// Restores moments written by [`Adam::records`].
    pub fn from_records<P: Params>(
        config: AdamConfig,
        step: u64,
        params: &P,
        records: &BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        let mut adam = Self::new(config, params);
        adam.step = step;
        for (i, n) in params.names().iter().enumerate() {
            for (prefix, slot) in [(M_PREFIX, &mut adam.m[i]), (V_PREFIX, &mut adam.v[i])] {
                let key = format!("{prefix}{n}");
                let t = records
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer record {key}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!("optimizer record {key} has wrong shape")));
                }
                *slot = t.clone();
            }
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Linear;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Linear::zeros(2, 1);
        let mut g = Linear::zeros(2, 1);
        g.w.data_mut().copy_from_slice(&[0.5, -3.0]);
        let mut adam = Adam::new(AdamConfig { lr: 0.25, ..Default::default() }, &p);
        adam.update(&mut p, &g).unwrap();
        // m̂/√v̂ = sign(g) on the first step.
        assert!((p.w.data()[0] + 0.25).abs() < 1e-6);
        assert!((p.w.data()[1] - 0.25).abs() < 1e-6);
        assert_eq!(p.b.data()[0], 0.0);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = Linear::init(3, 2, &mut rng);
        p.round_to_f32();
        let before = p.clone();
        let mut g = p.clone();
        g.w.scale(7.0);
        let mut adam = Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &p);
        for _ in 0..5 {
            adam.update(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn records_round_trip() {
        let mut p = Linear::zeros(2, 2);
        let mut g = p.clone();
        g.b.fill(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g).unwrap();
        let recs: BTreeMap<_, _> = adam.records(&p).into_iter().collect();
        let back = Adam::from_records(adam.config, adam.step, &p, &recs).unwrap();
        assert_eq!(back, adam);
    }

}
