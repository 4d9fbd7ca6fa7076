//! The dual-branch model: shared ray projection, RGB and depth branches, and
//! the per-layer fusion blocks selected by a [`SigmaSchedule`].

use std::collections::BTreeMap;

use rand::Rng;

use super::block::BlockCache;
use super::branch::{Branch, EmbedCache, HeadCache};
use super::config::{ModelConfig, SigmaSchedule};
use super::fusion::{FusionBlock, FusionCache};
use super::params::{join, Params};
use crate::codec::{orthonormal_rows, LatentTensor};
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatMut, MatRef, Tensor};

/// `concat(cond + rays, noise)` along channels.
pub fn assemble_branch_input(
    cond: &LatentTensor,
    rays: &LatentTensor,
    noise: &LatentTensor,
) -> Result<LatentTensor> {
    if !cond.same_shape(rays) {
        return Err(Error::shape(format!(
            "condition {:?} and rays {:?} differ",
            cond.dims(),
            rays.dims()
        )));
    }
    if cond.grid() != noise.grid() {
        return Err(Error::shape(format!(
            "condition grid {:?} and noise grid {:?} differ",
            cond.grid(),
            noise.grid()
        )));
    }
    let (tt, c, h, w) = cond.dims();
    let cn = noise.channels;
    let plane = h * w;
    let mut out = LatentTensor::zeros(tt, c + cn, h, w);
    for t in 0..tt {
        let dst = &mut out.data[t * (c + cn) * plane..(t + 1) * (c + cn) * plane];
        let src_c = &cond.data[t * c * plane..(t + 1) * c * plane];
        let src_r = &rays.data[t * c * plane..(t + 1) * c * plane];
        for (i, d) in dst[..c * plane].iter_mut().enumerate() {
            *d = src_c[i] + src_r[i];
        }
        dst[c * plane..].copy_from_slice(&noise.data[t * cn * plane..(t + 1) * cn * plane]);
    }
    Ok(out)
}

/// Fusion blocks keyed by 1-based layer index.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionSet {
    pub rgb_to_depth: BTreeMap<usize, FusionBlock>,
    pub depth_to_rgb: BTreeMap<usize, FusionBlock>,
}

impl FusionSet {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, schedule: &SigmaSchedule, rng: &mut R) -> Self {
        let mut make = |layers: &std::collections::BTreeSet<usize>| {
            layers
                .iter()
                .map(|&k| (k, FusionBlock::init(cfg.hidden, cfg.fusion_depth, rng)))
                .collect()
        };
        let rgb_to_depth = make(&schedule.rgb_to_depth);
        let depth_to_rgb = make(&schedule.depth_to_rgb);
        Self {
            rgb_to_depth,
            depth_to_rgb,
        }
    }

    pub fn schedule(&self) -> SigmaSchedule {
        SigmaSchedule {
            rgb_to_depth: self.rgb_to_depth.keys().copied().collect(),
            depth_to_rgb: self.depth_to_rgb.keys().copied().collect(),
        }
    }
}

impl Params for FusionSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (k, b) in &self.rgb_to_depth {
            b.visit(&join(prefix, &format!("rgb_to_depth{k}")), f);
        }
        for (k, b) in &self.depth_to_rgb {
            b.visit(&join(prefix, &format!("depth_to_rgb{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (k, b) in self.rgb_to_depth.iter_mut() {
            b.visit_mut(&join(prefix, &format!("rgb_to_depth{k}")), f);
        }
        for (k, b) in self.depth_to_rgb.iter_mut() {
            b.visit_mut(&join(prefix, &format!("depth_to_rgb{k}")), f);
        }
    }
}

/// Everything one forward pass consumes for a single clip.
#[derive(Clone, Debug)]
pub struct DualInput {
    pub cond_rgb: LatentTensor,
    /// Ignored by models without a depth branch.
    pub cond_depth: LatentTensor,
    /// Unshuffled ray features, `T′ × 6f² × h × w`.
    pub ray_features: LatentTensor,
    pub z_rgb: LatentTensor,
    pub z_depth: LatentTensor,
    pub t: f64,
    pub tag: usize,
}

/// Velocity predictions of both branches.
#[derive(Clone, Debug)]
pub struct DualOutput {
    pub v_rgb: LatentTensor,
    pub v_depth: Option<LatentTensor>,
}

struct BranchTrace {
    embed: EmbedCache,
    blocks: Vec<BlockCache>,
    head: HeadCache,
    /// Block outputs before fusion injection, kept where a fusion block reads them.
    pre_injection: BTreeMap<usize, Vec<f64>>,
}

/// Saved state of [`DualDit::forward`] for the backward pass and probes.
pub struct ForwardCache {
    grid: (usize, usize, usize),
    ray_latent: LatentTensor,
    rgb: BranchTrace,
    depth: Option<BranchTrace>,
    fusion_rd: BTreeMap<usize, FusionCache>,
    fusion_dr: BTreeMap<usize, FusionCache>,
    /// Per-layer token activations (`L × C`, after fusion injection).
    pub rgb_layers: Vec<Vec<f64>>,
    pub depth_layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn ray_latent(&self) -> &LatentTensor {
        &self.ray_latent
    }
}

/// Dual-branch diffusion transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct DualDit {
    pub config: ModelConfig,
    /// `C′ × 6f²` projection from unshuffled rays to latent channels.
    pub ray_proj: Tensor,
    pub rgb: Branch,
    pub depth: Option<Branch>,
    pub fusion: Option<FusionSet>,
}

impl DualDit {
    /// Both branches, no fusion blocks (decoupled stage).
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ray_proj = Tensor::from_vec(
            &[config.latent_channels, config.ray_channels],
            orthonormal_rows(config.latent_channels, config.ray_channels, rng),
        )?;
        let rgb = Branch::init(&config, rng);
        let depth = Branch::init(&config, rng);
        let mut m = Self {
            config,
            ray_proj,
            rgb,
            depth: Some(depth),
            fusion: None,
        };
        m.round_to_f32();
        Ok(m)
    }

    /// RGB branch only: the no-depth ablation.
    pub fn new_rgb_only<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(config, rng)?;
        m.depth = None;
        Ok(m)
    }

    /// Adds zero-initialized fusion blocks for `schedule`.
    pub fn enable_fusion<R: Rng + ?Sized>(&mut self, schedule: &SigmaSchedule, rng: &mut R) -> Result<()> {
        if self.depth.is_none() {
            return Err(Error::Config("fusion needs a depth branch".into()));
        }
        schedule.validate(self.config.num_blocks)?;
        let mut set = FusionSet::init(&self.config, schedule, rng);
        set.round_to_f32();
        self.fusion = Some(set);
        Ok(())
    }

    pub fn has_fusion(&self) -> bool {
        self.fusion.is_some()
    }

    /// A same-shaped model with every parameter zero, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.zero();
        g
    }

    fn check_input(&self, input: &DualInput) -> Result<(usize, usize, usize)> {
        let cp = self.config.latent_channels;
        let grid = input.z_rgb.grid();
        if input.z_rgb.channels != cp || input.cond_rgb.channels != cp {
            return Err(Error::shape(format!("RGB latents must have {cp} channels")));
        }
        if input.ray_features.channels != self.config.ray_channels || input.ray_features.grid() != grid {
            return Err(Error::shape(format!(
                "ray features {:?} do not match grid {grid:?} with {} channels",
                input.ray_features.dims(),
                self.config.ray_channels
            )));
        }
        if self.depth.is_some()
            && (input.z_depth.dims() != input.z_rgb.dims() || input.cond_depth.dims() != input.z_rgb.dims())
        {
            return Err(Error::shape("depth latents must match the RGB latent shape"));
        }
        if input.tag >= self.config.vocab {
            return Err(Error::InvalidInput(format!(
                "descriptor {} outside vocabulary of {}",
                input.tag, self.config.vocab
            )));
        }
        if !input.t.is_finite() {
            return Err(Error::InvalidInput("timestep must be finite".into()));
        }
        Ok(grid)
    }

    /// Ray latent `P · features` at every latent position.
    pub fn project_rays(&self, features: &LatentTensor) -> LatentTensor {
        let (tt, cin, h, w) = features.dims();
        let cp = self.config.latent_channels;
        let plane = h * w;
        let mut out = LatentTensor::zeros(tt, cp, h, w);
        for t in 0..tt {
            gemm(
                1.0,
                MatRef::new(self.ray_proj.data(), cp, cin),
                MatRef::new(&features.data[t * cin * plane..(t + 1) * cin * plane], cin, plane),
                0.0,
                MatMut::new(&mut out.data[t * cp * plane..(t + 1) * cp * plane], cp, plane),
            );
        }
        out
    }

    /// Runs both branches. With `gamma = false` (or no fusion blocks) the
    /// branches never exchange features.
    pub fn forward(&self, input: &DualInput, gamma: bool) -> Result<(DualOutput, ForwardCache)> {
        let grid = self.check_input(input)?;
        let rows = grid.0 * grid.1 * grid.2;
        let n = self.config.num_blocks;
        let ray_latent = self.project_rays(&input.ray_features);

        let rgb_in = assemble_branch_input(&input.cond_rgb, &ray_latent, &input.z_rgb)?.to_tokens();
        let (mut h_r, emb_r) = self.rgb.embed(&rgb_in, grid, input.t, input.tag);
        let mut depth_state = match &self.depth {
            Some(br) => {
                let d_in = assemble_branch_input(&input.cond_depth, &ray_latent, &input.z_depth)?.to_tokens();
                Some(br.embed(&d_in, grid, input.t, input.tag))
            }
            None => None,
        };

        let fusion = if gamma { self.fusion.as_ref() } else { None };
        let mut blocks_r = Vec::with_capacity(n);
        let mut blocks_d = Vec::with_capacity(n);
        let mut pre_r = BTreeMap::new();
        let mut pre_d = BTreeMap::new();
        let mut fusion_rd = BTreeMap::new();
        let mut fusion_dr = BTreeMap::new();
        let mut rgb_layers = Vec::with_capacity(n);
        let mut depth_layers = Vec::with_capacity(n);
        for k in 0..n {
            let layer = k + 1;
            let (out_r, cache_r) = self.rgb.block_forward(k, &h_r, rows, &emb_r.cond);
            blocks_r.push(cache_r);
            h_r = out_r;
            if let (Some(br), Some((h_d, emb_d))) = (&self.depth, depth_state.as_mut()) {
                let (out_d, cache_d) = br.block_forward(k, h_d, rows, &emb_d.cond);
                blocks_d.push(cache_d);
                *h_d = out_d;
                if let Some(fs) = fusion {
                    // both injections read the pre-injection states
                    let to_depth = match fs.rgb_to_depth.get(&layer) {
                        Some(fb) => {
                            let (y, c) = fb.forward(&h_r, grid)?;
                            fusion_rd.insert(layer, c);
                            pre_r.insert(layer, h_r.clone());
                            Some(y)
                        }
                        None => None,
                    };
                    let to_rgb = match fs.depth_to_rgb.get(&layer) {
                        Some(fb) => {
                            let (y, c) = fb.forward(h_d, grid)?;
                            fusion_dr.insert(layer, c);
                            pre_d.insert(layer, h_d.clone());
                            Some(y)
                        }
                        None => None,
                    };
                    if let Some(y) = to_depth {
                        for (a, b) in h_d.iter_mut().zip(&y) {
                            *a += b;
                        }
                    }
                    if let Some(y) = to_rgb {
                        for (a, b) in h_r.iter_mut().zip(&y) {
                            *a += b;
                        }
                    }
                }
                depth_layers.push(h_d.clone());
            }
            rgb_layers.push(h_r.clone());
        }

        let cp = self.config.latent_channels;
        let (out_r, head_r) = self.rgb.head_forward(&h_r, rows, &emb_r.cond);
        let v_rgb = LatentTensor::from_tokens(grid.0, cp, grid.1, grid.2, &out_r)?;
        let rgb_trace = BranchTrace {
            embed: emb_r,
            blocks: blocks_r,
            head: head_r,
            pre_injection: pre_r,
        };
        let (v_depth, depth_trace) = match (&self.depth, depth_state) {
            (Some(br), Some((h_d, emb_d))) => {
                let (out_d, head_d) = br.head_forward(&h_d, rows, &emb_d.cond);
                (
                    Some(LatentTensor::from_tokens(grid.0, cp, grid.1, grid.2, &out_d)?),
                    Some(BranchTrace {
                        embed: emb_d,
                        blocks: blocks_d,
                        head: head_d,
                        pre_injection: pre_d,
                    }),
                )
            }
            _ => (None, None),
        };
        Ok((
            DualOutput { v_rgb, v_depth },
            ForwardCache {
                grid,
                ray_latent,
                rgb: rgb_trace,
                depth: depth_trace,
                fusion_rd,
                fusion_dr,
                rgb_layers,
                depth_layers,
            },
        ))
    }

    /// Back-propagates output gradients (`∂L/∂v̂`, latent layout) and adds
    /// parameter gradients into `grad`. `input` must be the forward input.
    pub fn backward(
        &self,
        input: &DualInput,
        cache: &ForwardCache,
        dv_rgb: &LatentTensor,
        dv_depth: Option<&LatentTensor>,
        grad: &mut DualDit,
    ) -> Result<()> {
        let grid = cache.grid;
        let rows = grid.0 * grid.1 * grid.2;
        let n = self.config.num_blocks;
        let cp = self.config.latent_channels;

        let mut dcond_r = vec![0.0; self.rgb.hidden()];
        let mut dh_r = self.rgb.head_backward(
            &cache.rgb.head,
            rows,
            &cache.rgb.embed.cond,
            &dv_rgb.to_tokens(),
            &mut dcond_r,
            &mut grad.rgb,
        );
        let mut depth_grad = match (&self.depth, &cache.depth, grad.depth.as_mut()) {
            (Some(br), Some(tr), Some(gbr)) => {
                let mut dcond = vec![0.0; br.hidden()];
                let dout = match dv_depth {
                    Some(dv) => dv.to_tokens(),
                    None => vec![0.0; rows * cp],
                };
                let dh = br.head_backward(&tr.head, rows, &tr.embed.cond, &dout, &mut dcond, gbr);
                Some((dh, dcond))
            }
            _ => None,
        };

        for k in (0..n).rev() {
            let layer = k + 1;
            if let (Some(fs), Some((dh_d, _))) = (self.fusion.as_ref(), depth_grad.as_mut()) {
                let gfs = grad
                    .fusion
                    .as_mut()
                    .ok_or_else(|| Error::Config("gradient model lacks fusion blocks".into()))?;
                // h_r_post = h_r_pre + F_dr(h_d_pre); h_d_post = h_d_pre + F_rd(h_r_pre)
                let extra_r = match cache.fusion_rd.get(&layer) {
                    Some(fc) => {
                        let x = &cache.rgb.pre_injection[&layer];
                        let g = gfs.rgb_to_depth.get_mut(&layer).expect("matching fusion gradient");
                        Some(fs.rgb_to_depth[&layer].backward(x, grid, fc, dh_d, g))
                    }
                    None => None,
                };
                let extra_d = match cache.fusion_dr.get(&layer) {
                    Some(fc) => {
                        let tr = cache.depth.as_ref().expect("depth trace");
                        let x = &tr.pre_injection[&layer];
                        let g = gfs.depth_to_rgb.get_mut(&layer).expect("matching fusion gradient");
                        Some(fs.depth_to_rgb[&layer].backward(x, grid, fc, &dh_r, g))
                    }
                    None => None,
                };
                if let Some(e) = extra_r {
                    for (a, b) in dh_r.iter_mut().zip(&e) {
                        *a += b;
                    }
                }
                if let Some(e) = extra_d {
                    for (a, b) in dh_d.iter_mut().zip(&e) {
                        *a += b;
                    }
                }
            }
            let (dh, dc) = self.rgb.blocks[k].backward(
                &cache.rgb.blocks[k],
                rows,
                &cache.rgb.embed.cond,
                &dh_r,
                &mut grad.rgb.blocks[k],
            );
            dh_r = dh;
            for (a, b) in dcond_r.iter_mut().zip(&dc) {
                *a += b;
            }
            if let (Some(br), Some(tr), Some((dh_d, dcond_d)), Some(gbr)) =
                (&self.depth, &cache.depth, depth_grad.as_mut(), grad.depth.as_mut())
            {
                let (dh, dc) = br.blocks[k].backward(&tr.blocks[k], rows, &tr.embed.cond, dh_d, &mut gbr.blocks[k]);
                *dh_d = dh;
                for (a, b) in dcond_d.iter_mut().zip(&dc) {
                    *a += b;
                }
            }
        }

        // embeddings, then the shared ray projection
        let dtok_r = self.rgb.embed_backward(&cache.rgb.embed, rows, &dh_r, &dcond_r, &mut grad.rgb);
        let mut dray_tokens = vec![0.0; rows * cp];
        let width_in = 2 * cp;
        for r in 0..rows {
            for c in 0..cp {
                dray_tokens[r * cp + c] += dtok_r[r * width_in + c];
            }
        }
        if let (Some(br), Some(tr), Some((dh_d, dcond_d)), Some(gbr)) =
            (&self.depth, &cache.depth, depth_grad.as_ref(), grad.depth.as_mut())
        {
            let dtok_d = br.embed_backward(&tr.embed, rows, dh_d, dcond_d, gbr);
            for r in 0..rows {
                for c in 0..cp {
                    dray_tokens[r * cp + c] += dtok_d[r * width_in + c];
                }
            }
        }
        let dray = LatentTensor::from_tokens(grid.0, cp, grid.1, grid.2, &dray_tokens)?;
        let (tt, cin, h, w) = input.ray_features.dims();
        let plane = h * w;
        for t in 0..tt {
            gemm(
                1.0,
                MatRef::new(&dray.data[t * cp * plane..(t + 1) * cp * plane], cp, plane),
                MatRef::new(&input.ray_features.data[t * cin * plane..(t + 1) * cin * plane], cin, plane).t(),
                1.0,
                MatMut::new(grad.ray_proj.data_mut(), cp, cin),
            );
        }
        Ok(())
    }

    /// The same model with the RGB and depth roles exchanged (fusion
    /// directions mirrored accordingly).
    pub fn mirrored(&self) -> Result<Self> {
        let depth = self
            .depth
            .clone()
            .ok_or_else(|| Error::Config("cannot mirror a model without a depth branch".into()))?;
        Ok(Self {
            config: self.config.clone(),
            ray_proj: self.ray_proj.clone(),
            rgb: depth,
            depth: Some(self.rgb.clone()),
            fusion: self.fusion.as_ref().map(|f| FusionSet {
                rgb_to_depth: f.depth_to_rgb.clone(),
                depth_to_rgb: f.rgb_to_depth.clone(),
            }),
        })
    }
}

impl Params for DualDit {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "ray_proj"), &self.ray_proj);
        self.rgb.visit(&join(prefix, "rgb"), f);
        if let Some(d) = &self.depth {
            d.visit(&join(prefix, "depth"), f);
        }
        if let Some(fs) = &self.fusion {
            fs.visit(&join(prefix, "fusion"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "ray_proj"), &mut self.ray_proj);
        self.rgb.visit_mut(&join(prefix, "rgb"), f);
        if let Some(d) = self.depth.as_mut() {
            d.visit_mut(&join(prefix, "depth"), f);
        }
        if let Some(fs) = self.fusion.as_mut() {
            fs.visit_mut(&join(prefix, "fusion"), f);
        }
    }
}
