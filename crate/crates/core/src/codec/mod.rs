//! Linear stand-in for a video VAE.
//!
//! Frames are grouped in time (the first frame alone, then groups of four),
//! each group is rearranged space-to-channel by 8×, and the resulting
//! `4·3·8·8 = 768` channels are projected to `C′` latent channels. A clip of
//! `T` frames at `H×W` therefore maps to a `T′×C′×h×w` latent with
//! `T′ = (T−1)/4 + 1`, `h = H/8`, `w = W/8`.
//!
//! Two modes exist. `Lossless` keeps all 768 channels, so `decode ∘ encode`
//! is the identity. `ShapeFaithful` projects onto `C′` orthonormal rows and
//! decodes with the pseudo-inverse, so `encode ∘ decode` is the identity on
//! latents. Its rows span the lowest-frequency part of a separable DCT over
//! the 8×8 block and a luma/chroma colour basis, averaged over the four
//! frames of a group, mixed by a seeded rotation. Decoding therefore gives a
//! blurred, group-averaged copy of the input rather than noise.

mod video_io;

pub use video_io::{
    read_depth_frames, read_rgb_frames, read_video_manifest, write_depth_frames,
    write_rgb_frames, write_video_manifest, VideoManifest,
};

use nalgebra::{DMatrix, SVD};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{gemm, MatMut, MatRef};

/// Spatial downsampling factor of the codec.
pub const SPATIAL_FACTOR: usize = 8;
/// Frames per temporal group.
pub const TEMPORAL_GROUP: usize = 4;
/// Channels of one space-to-channel group: `4 · 3 · 8 · 8`.
pub const GROUP_CHANNELS: usize = TEMPORAL_GROUP * 3 * SPATIAL_FACTOR * SPATIAL_FACTOR;
/// Channels of the first, single-frame group before replication.
const FRAME_CHANNELS: usize = 3 * SPATIAL_FACTOR * SPATIAL_FACTOR;

/// Number of latent frames for a clip of `frames` frames.
pub fn latent_frames(frames: usize) -> Result<usize> {
    if frames == 0 || !(frames - 1).is_multiple_of(TEMPORAL_GROUP) {
        return Err(Error::shape(format!(
            "frame count {frames} is not 1 + a multiple of {TEMPORAL_GROUP}"
        )));
    }
    Ok((frames - 1) / TEMPORAL_GROUP + 1)
}

/// What a [`VideoTensor`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoKind {
    Rgb,
    /// Depth replicated to three identical channels.
    Depth3,
}

impl VideoKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VideoKind::Rgb => "rgb",
            VideoKind::Depth3 => "depth3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(VideoKind::Rgb),
            "depth3" => Ok(VideoKind::Depth3),
            other => Err(Error::InvalidInput(format!("unknown video kind '{other}'"))),
        }
    }
}

/// `T×3×H×W` frames with values in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub kind: VideoKind,
    pub data: Vec<f64>,
}

impl VideoTensor {
    pub fn zeros(frames: usize, height: usize, width: usize, kind: VideoKind) -> Self {
        Self {
            frames,
            height,
            width,
            kind,
            data: vec![0.0; frames * 3 * height * width],
        }
    }

    pub fn from_vec(
        frames: usize,
        height: usize,
        width: usize,
        kind: VideoKind,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::shape("video needs at least one frame"));
        }
        if data.len() != frames * 3 * height * width {
            return Err(Error::shape(format!(
                "video {frames}x3x{height}x{width} needs {} values, got {}",
                frames * 3 * height * width,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite video values".into()));
        }
        Ok(Self {
            frames,
            height,
            width,
            kind,
            data,
        })
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * 3 + c) * self.height + y) * self.width + x
    }

    pub fn at(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(t, c, y, x)]
    }

    /// Frame `t` as its own single-frame video.
    pub fn frame(&self, t: usize) -> VideoTensor {
        let n = 3 * self.height * self.width;
        VideoTensor {
            frames: 1,
            height: self.height,
            width: self.width,
            kind: self.kind,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }
}

/// `T×1×H×W` positive depth values (camera-frame z).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthVideo {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthVideo {
    pub fn at(&self, t: usize, y: usize, x: usize) -> f64 {
        self.data[(t * self.height + y) * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Replicates depth to three channels after an affine per-sequence
/// normalization to `[−1, 1]` (min → −1, max → +1). A constant sequence maps
/// to all zeros.
pub fn replicate_depth(depth: &DepthVideo) -> VideoTensor {
    let (lo, hi) = depth.min_max();
    let range = hi - lo;
    let plane = depth.height * depth.width;
    let mut data = Vec::with_capacity(depth.frames * 3 * plane);
    for t in 0..depth.frames {
        let src = &depth.data[t * plane..(t + 1) * plane];
        let normalized: Vec<f64> = if range > 0.0 {
            src.iter().map(|&d| 2.0 * (d - lo) / range - 1.0).collect()
        } else {
            vec![0.0; plane]
        };
        for _ in 0..3 {
            data.extend_from_slice(&normalized);
        }
    }
    VideoTensor {
        frames: depth.frames,
        height: depth.height,
        width: depth.width,
        kind: VideoKind::Depth3,
        data,
    }
}

/// `T′×C′×h×w` latent values.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
            data: vec![0.0; frames * channels * height * width],
        }
    }

    pub fn from_vec(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != frames * channels * height * width {
            return Err(Error::shape(format!(
                "latent {frames}x{channels}x{height}x{width} needs {} values, got {}",
                frames * channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    /// Standard-normal entries.
    pub fn randn<R: Rng + ?Sized>(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let n = frames * channels * height * width;
        let data = (0..n)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        Self {
            frames,
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.frames, self.channels, self.height, self.width)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.channels, self.height, self.width)
    }

    /// `(T′, h, w)`, the token grid.
    pub fn grid(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn num_tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.channels + c) * self.height + y) * self.width + x
    }

    pub fn at(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(t, c, y, x)]
    }

    /// Row-major `L × C′` token matrix, tokens ordered `(t, y, x)`.
    pub fn to_tokens(&self) -> Vec<f64> {
        let (tf, c, h, w) = self.dims();
        let plane = h * w;
        let mut out = vec![0.0; tf * plane * c];
        for t in 0..tf {
            for ch in 0..c {
                let src = &self.data[(t * c + ch) * plane..(t * c + ch + 1) * plane];
                for (p, &v) in src.iter().enumerate() {
                    out[(t * plane + p) * c + ch] = v;
                }
            }
        }
        out
    }

    /// Inverse of [`LatentTensor::to_tokens`].
    pub fn from_tokens(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        tokens: &[f64],
    ) -> Result<Self> {
        let plane = height * width;
        if tokens.len() != frames * plane * channels {
            return Err(Error::shape(format!(
                "{} token values for a {frames}x{channels}x{height}x{width} latent",
                tokens.len()
            )));
        }
        let mut out = Self::zeros(frames, channels, height, width);
        for t in 0..frames {
            for p in 0..plane {
                for ch in 0..channels {
                    out.data[(t * channels + ch) * plane + p] = tokens[(t * plane + p) * channels + ch];
                }
            }
        }
        Ok(out)
    }

    pub fn same_shape(&self, other: &LatentTensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Latent frame `t` as a one-frame latent.
    pub fn frame(&self, t: usize) -> LatentTensor {
        let n = self.channels * self.height * self.width;
        LatentTensor {
            frames: 1,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data[t * n..(t + 1) * n].to_vec(),
        }
    }
}

/// Puts a single-frame latent at frame 0 and zero-pads the remaining
/// `frames − 1` latent frames.
pub fn prepare_condition(image_latent: &LatentTensor, frames: usize) -> Result<LatentTensor> {
    if image_latent.frames != 1 {
        return Err(Error::shape(format!(
            "condition latent must have one frame, got {}",
            image_latent.frames
        )));
    }
    if frames == 0 {
        return Err(Error::shape("condition needs at least one latent frame"));
    }
    let mut out = LatentTensor::zeros(
        frames,
        image_latent.channels,
        image_latent.height,
        image_latent.width,
    );
    out.data[..image_latent.data.len()].copy_from_slice(&image_latent.data);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodecMode {
    /// Identity on all 768 group channels.
    Lossless,
    /// Orthonormal projection to `C′` channels.
    ShapeFaithful,
}

impl CodecMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CodecMode::Lossless => "lossless",
            CodecMode::ShapeFaithful => "shape_faithful",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lossless" => Ok(CodecMode::Lossless),
            "shape_faithful" => Ok(CodecMode::ShapeFaithful),
            other => Err(Error::Config(format!("unknown codec mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    pub mode: CodecMode,
    /// Latent channels `C′`; ignored in lossless mode.
    pub channels: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            mode: CodecMode::ShapeFaithful,
            channels: 16,
            seed: 0,
        }
    }
}

/// Maximum `C′` for which the single-frame first group stays exactly
/// invertible in shape-faithful mode.
pub const MAX_SHAPE_FAITHFUL_CHANNELS: usize = FRAME_CHANNELS;

/// A configured encoder/decoder pair.
#[derive(Clone, Debug)]
pub struct LatentCodec {
    config: CodecConfig,
    channels: usize,
    /// `C′ × 768`, orthonormal rows (shape-faithful only).
    projection: Vec<f64>,
    /// `C′ × 192`: the projection restricted to a replicated single frame.
    first_group: Vec<f64>,
    /// `192 × C′` pseudo-inverse of `first_group`.
    first_group_pinv: Vec<f64>,
}

impl LatentCodec {
    pub fn new(config: CodecConfig) -> Result<Self> {
        match config.mode {
            CodecMode::Lossless => Ok(Self {
                config,
                channels: GROUP_CHANNELS,
                projection: Vec::new(),
                first_group: Vec::new(),
                first_group_pinv: Vec::new(),
            }),
            CodecMode::ShapeFaithful => {
                let c = config.channels;
                if c == 0 || c > MAX_SHAPE_FAITHFUL_CHANNELS {
                    return Err(Error::Config(format!(
                        "shape_faithful codec needs 1 <= C' <= {MAX_SHAPE_FAITHFUL_CHANNELS}, got {c}"
                    )));
                }
                let mut rng = rng::stream(config.seed, &[0xC0DEC]);
                let projection = smooth_projection(c, &orthonormal_rows(c, c, &mut rng));
                // Encoding a replicated frame sums the four slot blocks.
                let mut first_group = vec![0.0; c * FRAME_CHANNELS];
                for r in 0..c {
                    for s in 0..TEMPORAL_GROUP {
                        for k in 0..FRAME_CHANNELS {
                            first_group[r * FRAME_CHANNELS + k] +=
                                projection[r * GROUP_CHANNELS + s * FRAME_CHANNELS + k];
                        }
                    }
                }
                let first_group_pinv = pseudo_inverse(&first_group, c, FRAME_CHANNELS)?;
                Ok(Self {
                    config,
                    channels: c,
                    projection,
                    first_group,
                    first_group_pinv,
                })
            }
        }
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    /// Latent channel count `C′`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// The `C′ × 768` projection (shape-faithful mode), row-major.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn encode(&self, video: &VideoTensor) -> Result<LatentTensor> {
        let tp = latent_frames(video.frames)?;
        let f = SPATIAL_FACTOR;
        if !video.height.is_multiple_of(f) || !video.width.is_multiple_of(f) {
            return Err(Error::shape(format!(
                "frame size {}x{} not divisible by {f}",
                video.height, video.width
            )));
        }
        let (h, w) = (video.height / f, video.width / f);
        let plane = h * w;
        let mut out = LatentTensor::zeros(tp, self.channels, h, w);
        for g in 0..tp {
            // column-per-position matrix: GROUP_CHANNELS x plane
            let group = self.gather_group(video, g);
            let dst = &mut out.data[g * self.channels * plane..(g + 1) * self.channels * plane];
            match self.config.mode {
                CodecMode::Lossless => dst.copy_from_slice(&group),
                CodecMode::ShapeFaithful => gemm(
                    1.0,
                    MatRef::new(&self.projection, self.channels, GROUP_CHANNELS),
                    MatRef::new(&group, GROUP_CHANNELS, plane),
                    0.0,
                    MatMut::new(dst, self.channels, plane),
                ),
            }
        }
        Ok(out)
    }

    pub fn decode(&self, latent: &LatentTensor, kind: VideoKind) -> Result<VideoTensor> {
        if latent.channels != self.channels {
            return Err(Error::shape(format!(
                "latent has {} channels, codec expects {}",
                latent.channels, self.channels
            )));
        }
        if latent.frames == 0 {
            return Err(Error::shape("latent has no frames"));
        }
        let f = SPATIAL_FACTOR;
        let (h, w) = (latent.height, latent.width);
        let plane = h * w;
        let frames = (latent.frames - 1) * TEMPORAL_GROUP + 1;
        let mut video = VideoTensor::zeros(frames, h * f, w * f, kind);
        for g in 0..latent.frames {
            let src = &latent.data[g * self.channels * plane..(g + 1) * self.channels * plane];
            if g == 0 {
                let frame: Vec<f64> = match self.config.mode {
                    CodecMode::Lossless => src[..FRAME_CHANNELS * plane].to_vec(),
                    CodecMode::ShapeFaithful => {
                        let mut x = vec![0.0; FRAME_CHANNELS * plane];
                        gemm(
                            1.0,
                            MatRef::new(&self.first_group_pinv, FRAME_CHANNELS, self.channels),
                            MatRef::new(src, self.channels, plane),
                            0.0,
                            MatMut::new(&mut x, FRAME_CHANNELS, plane),
                        );
                        x
                    }
                };
                scatter_slot(&mut video, 0, &frame, plane);
            } else {
                let group: Vec<f64> = match self.config.mode {
                    CodecMode::Lossless => src.to_vec(),
                    CodecMode::ShapeFaithful => {
                        let mut x = vec![0.0; GROUP_CHANNELS * plane];
                        gemm(
                            1.0,
                            MatRef::new(&self.projection, self.channels, GROUP_CHANNELS).t(),
                            MatRef::new(src, self.channels, plane),
                            0.0,
                            MatMut::new(&mut x, GROUP_CHANNELS, plane),
                        );
                        x
                    }
                };
                for s in 0..TEMPORAL_GROUP {
                    let t = (g - 1) * TEMPORAL_GROUP + 1 + s;
                    let slot = &group[s * FRAME_CHANNELS * plane..(s + 1) * FRAME_CHANNELS * plane];
                    scatter_slot(&mut video, t, slot, plane);
                }
            }
        }
        Ok(video)
    }

    /// The 768 × (h·w) space-to-channel matrix of temporal group `g`.
    fn gather_group(&self, video: &VideoTensor, g: usize) -> Vec<f64> {
        let f = SPATIAL_FACTOR;
        let (h, w) = (video.height / f, video.width / f);
        let plane = h * w;
        let mut out = vec![0.0; GROUP_CHANNELS * plane];
        for s in 0..TEMPORAL_GROUP {
            let t = if g == 0 { 0 } else { (g - 1) * TEMPORAL_GROUP + 1 + s };
            for c in 0..3 {
                for dy in 0..f {
                    for dx in 0..f {
                        let ch = ((s * 3 + c) * f + dy) * f + dx;
                        let row = &mut out[ch * plane..(ch + 1) * plane];
                        for y in 0..h {
                            for x in 0..w {
                                row[y * w + x] = video.at(t, c, y * f + dy, x * f + dx);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[doc(hidden)]
    pub fn first_group_map(&self) -> &[f64] {
        &self.first_group
    }
}

/// Writes one frame's `192 × (h·w)` space-to-channel block back to pixels.
fn scatter_slot(video: &mut VideoTensor, t: usize, block: &[f64], plane: usize) {
    let f = SPATIAL_FACTOR;
    let w = video.width / f;
    for c in 0..3 {
        for dy in 0..f {
            for dx in 0..f {
                let ch = (c * f + dy) * f + dx;
                let row = &block[ch * plane..(ch + 1) * plane];
                for (p, &v) in row.iter().enumerate() {
                    let (y, x) = (p / w, p % w);
                    let idx = video.index(t, c, y * f + dy, x * f + dx);
                    video.data[idx] = v;
                }
            }
        }
    }
}

/// Orthonormal colour basis: luma, then two chroma directions.
const COLOUR_BASIS: [[f64; 3]; 3] = [
    [0.577_350_269_189_625_8, 0.577_350_269_189_625_8, 0.577_350_269_189_625_8],
    [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2, 0.0],
    [0.408_248_290_463_863, 0.408_248_290_463_863, -0.816_496_580_927_726],
];

/// Orthonormal DCT-II vector of frequency `k` on `n` points.
fn dct(k: usize, n: usize) -> Vec<f64> {
    let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    (0..n)
        .map(|i| scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
        .collect()
}

/// `rotation` (`C′ × C′`, orthogonal) applied to the `C′` lowest-frequency
/// group-constant basis vectors. Chroma counts as two frequency steps
/// higher than luma.
fn smooth_projection(channels: usize, rotation: &[f64]) -> Vec<f64> {
    let f = SPATIAL_FACTOR;
    let mut order: Vec<(usize, usize, usize, usize)> = (0..3)
        .flat_map(|c| (0..f).flat_map(move |fy| (0..f).map(move |fx| (fy + fx + if c > 0 { 2 } else { 0 }, c, fy, fx))))
        .collect();
    order.sort_unstable();
    let slot = 1.0 / (TEMPORAL_GROUP as f64).sqrt();
    let basis: Vec<Vec<f64>> = order[..channels]
        .iter()
        .map(|&(_, c, fy, fx)| {
            let (by, bx) = (dct(fy, f), dct(fx, f));
            let mut row = vec![0.0; GROUP_CHANNELS];
            for s in 0..TEMPORAL_GROUP {
                for (ch, &w) in COLOUR_BASIS[c].iter().enumerate() {
                    for dy in 0..f {
                        for dx in 0..f {
                            row[((s * 3 + ch) * f + dy) * f + dx] = slot * w * by[dy] * bx[dx];
                        }
                    }
                }
            }
            row
        })
        .collect();
    let mut out = vec![0.0; channels * GROUP_CHANNELS];
    for r in 0..channels {
        for (k, b) in basis.iter().enumerate() {
            let q = rotation[r * channels + k];
            for (o, v) in out[r * GROUP_CHANNELS..(r + 1) * GROUP_CHANNELS].iter_mut().zip(b) {
                *o += q * v;
            }
        }
    }
    out
}

/// `rows × cols` matrix (rows ≤ cols) with orthonormal rows, from the QR
/// factorization of a Gaussian matrix.
pub fn orthonormal_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    assert!(rows <= cols, "cannot have {rows} orthonormal rows in R^{cols}");
    let g = DMatrix::<f64>::from_fn(cols, rows, |_, _| {
        rng.sample::<f64, _>(rand_distr::StandardNormal)
    });
    let q = g.qr().q();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = q[(c, r)];
        }
    }
    out
}

/// Moore–Penrose pseudo-inverse of a full-row-rank `rows × cols` matrix.
fn pseudo_inverse(m: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let a = DMatrix::from_row_slice(rows, cols, m);
    let svd = SVD::new(a, true, true);
    let smin = svd.singular_values.min();
    if smin < 1e-9 {
        return Err(Error::Numeric(format!(
            "codec first-group map is rank deficient (smallest singular value {smin:.3e})"
        )));
    }
    let pinv = svd
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let mut out = vec![0.0; cols * rows];
    for r in 0..cols {
        for c in 0..rows {
            out[r * rows + c] = pinv[(r, c)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dyadic_video(frames: usize, h: usize, w: usize, seed: u64) -> VideoTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * 3 * h * w)
            .map(|_| (rng.gen_range(-256i32..=256) as f64) / 256.0)
            .collect();
        VideoTensor::from_vec(frames, h, w, VideoKind::Rgb, data).unwrap()
    }

    fn shape_faithful() -> LatentCodec {
        LatentCodec::new(CodecConfig::default()).unwrap()
    }

    #[test]
    fn latent_frame_formula() {
        assert_eq!(latent_frames(1).unwrap(), 1);
        assert_eq!(latent_frames(17).unwrap(), 5);
        assert_eq!(latent_frames(33).unwrap(), 9);
        assert!(latent_frames(16).is_err());
        assert!(latent_frames(0).is_err());
    }

    #[test]
    fn encode_shape_for_17_frames() {
        let z = shape_faithful().encode(&dyadic_video(17, 64, 64, 1)).unwrap();
        assert_eq!(z.dims(), (5, 16, 8, 8));
    }

    #[test]
    fn encode_rejects_indivisible_dims() {
        let codec = shape_faithful();
        assert!(codec.encode(&VideoTensor::zeros(16, 64, 64, VideoKind::Rgb)).is_err());
        assert!(codec.encode(&VideoTensor::zeros(5, 60, 64, VideoKind::Rgb)).is_err());
    }

    #[test]
    fn lossless_round_trip_is_exact() {
        let codec = LatentCodec::new(CodecConfig {
            mode: CodecMode::Lossless,
            ..CodecConfig::default()
        })
        .unwrap();
        for &(t, h, w) in &[(1, 8, 8), (5, 16, 8), (9, 16, 24)] {
            let v = dyadic_video(t, h, w, t as u64);
            let z = codec.encode(&v).unwrap();
            assert_eq!(z.channels, GROUP_CHANNELS);
            assert_eq!(codec.decode(&z, VideoKind::Rgb).unwrap(), v);
        }
    }

    #[test]
    fn projection_rows_are_orthonormal() {
        let codec = shape_faithful();
        let p = codec.projection();
        let c = codec.channels();
        for i in 0..c {
            for j in 0..c {
                let dot: f64 = (0..GROUP_CHANNELS)
                    .map(|k| p[i * GROUP_CHANNELS + k] * p[j * GROUP_CHANNELS + k])
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
        // the first-group map times its pseudo-inverse is the identity
        let m = codec.first_group_map();
        let pinv = &codec.first_group_pinv;
        for i in 0..c {
            for j in 0..c {
                let dot: f64 = (0..FRAME_CHANNELS)
                    .map(|k| m[i * FRAME_CHANNELS + k] * pinv[k * c + j])
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shape_faithful_encode_decode_is_identity_on_latents() {
        let codec = shape_faithful();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let z = LatentTensor::randn(5, 16, 4, 4, &mut rng);
        let back = codec.encode(&codec.decode(&z, VideoKind::Rgb).unwrap()).unwrap();
        let err = z
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max err {err}");
    }

    #[test]
    fn zero_latent_decodes_to_zero_video() {
        let codec = shape_faithful();
        let v = codec
            .decode(&LatentTensor::zeros(3, 16, 2, 2), VideoKind::Rgb)
            .unwrap();
        assert_eq!(v.frames, 9);
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_too_many_channels() {
        let cfg = CodecConfig {
            channels: MAX_SHAPE_FAITHFUL_CHANNELS + 1,
            ..CodecConfig::default()
        };
        assert!(LatentCodec::new(cfg).is_err());
    }

    #[test]
    fn constant_depth_replicates_to_zero() {
        let d = DepthVideo {
            frames: 2,
            height: 2,
            width: 2,
            data: vec![5.0; 8],
        };
        let v = replicate_depth(&d);
        assert_eq!(v.kind, VideoKind::Depth3);
        assert!(v.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn depth_ramp_maps_to_unit_interval() {
        let data: Vec<f64> = (0..=10).map(|x| x as f64).collect();
        let d = DepthVideo {
            frames: 1,
            height: 1,
            width: 11,
            data: data.clone(),
        };
        let v = replicate_depth(&d);
        for (x, &depth) in data.iter().enumerate() {
            let expect = depth / 10.0 * 2.0 - 1.0;
            for c in 0..3 {
                assert!((v.at(0, c, 0, x) - expect).abs() < 1e-15);
            }
        }
        assert_eq!(v.at(0, 0, 0, 0), -1.0);
        assert_eq!(v.at(0, 2, 0, 10), 1.0);
    }

    #[test]
    fn single_differing_pixel_keeps_channels_equal() {
        let mut data = vec![2.0; 16];
        data[5] = 3.0;
        let v = replicate_depth(&DepthVideo {
            frames: 1,
            height: 4,
            width: 4,
            data,
        });
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(v.at(0, 0, y, x), v.at(0, 1, y, x));
                assert_eq!(v.at(0, 1, y, x), v.at(0, 2, y, x));
            }
        }
    }

    #[test]
    fn condition_padding() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let img = LatentTensor::randn(1, 16, 2, 2, &mut rng);
        assert_eq!(prepare_condition(&img, 1).unwrap(), img);
        let padded = prepare_condition(&img, 5).unwrap();
        assert_eq!(padded.frames, 5);
        assert_eq!(padded.frame(0), img);
        for t in 1..5 {
            assert!(padded.frame(t).data.iter().all(|&x| x == 0.0));
        }
        let s_in: f64 = img.data.iter().sum();
        let s_out: f64 = padded.data.iter().sum();
        assert_eq!(s_in, s_out);
    }

    #[test]
    fn tokens_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let z = LatentTensor::randn(2, 3, 2, 4, &mut rng);
        let tok = z.to_tokens();
        assert_eq!(tok[(8 + 5) * 3 + 2], z.at(1, 2, 1, 1));
        assert_eq!(LatentTensor::from_tokens(2, 3, 2, 4, &tok).unwrap(), z);
    }
}
