//! Frame directories: 8-bit RGB PNGs, 16-bit grayscale depth PNGs, and a
//! small `key=value` manifest.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use super::{DepthVideo, VideoKind, VideoTensor};
use crate::error::{Error, Result};

fn frame_path(dir: &Path, prefix: &str, t: usize) -> std::path::PathBuf {
    dir.join(format!("{prefix}_{t:04}.png"))
}

fn to_u8(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Writes `<prefix>_%04d.png` for every frame. A depth3 video is written
/// from its first channel.
pub fn write_rgb_frames(dir: &Path, prefix: &str, video: &VideoTensor) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..video.frames {
        let img = ImageBuffer::from_fn(video.width as u32, video.height as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                to_u8(video.at(t, 0, y, x)),
                to_u8(video.at(t, 1, y, x)),
                to_u8(video.at(t, 2, y, x)),
            ])
        });
        let path = frame_path(dir, prefix, t);
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

/// Reads `frames` RGB PNGs back into `[−1, 1]`.
pub fn read_rgb_frames(dir: &Path, prefix: &str, frames: usize) -> Result<VideoTensor> {
    let mut out: Option<VideoTensor> = None;
    for t in 0..frames {
        let path = frame_path(dir, prefix, t);
        let img = image::open(&path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let video = out.get_or_insert_with(|| VideoTensor::zeros(frames, h, w, VideoKind::Rgb));
        if video.width != w || video.height != h {
            return Err(Error::shape(format!(
                "{} is {w}x{h}, expected {}x{}",
                path.display(),
                video.width,
                video.height
            )));
        }
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                let idx = video.index(t, c, y as usize, x as usize);
                video.data[idx] = px[c] as f64 / 127.5 - 1.0;
            }
        }
    }
    out.ok_or_else(|| Error::shape("cannot read a video with zero frames"))
}

/// Writes depth as 16-bit PNGs normalized by the sequence min/max, which are
/// returned for the manifest.
pub fn write_depth_frames(dir: &Path, prefix: &str, depth: &DepthVideo) -> Result<(f64, f64)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (lo, hi) = depth.min_max();
    let range = hi - lo;
    for t in 0..depth.frames {
        let img = ImageBuffer::from_fn(depth.width as u32, depth.height as u32, |x, y| {
            let d = depth.at(t, y as usize, x as usize);
            let q = if range > 0.0 {
                ((d - lo) / range * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            Luma([q])
        });
        let path = frame_path(dir, prefix, t);
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }
    Ok((lo, hi))
}

/// Reads 16-bit depth PNGs and maps them back to `[min, max]`.
pub fn read_depth_frames(
    dir: &Path,
    prefix: &str,
    frames: usize,
    min: f64,
    max: f64,
) -> Result<DepthVideo> {
    let mut out: Option<DepthVideo> = None;
    for t in 0..frames {
        let path = frame_path(dir, prefix, t);
        let img = image::open(&path)
            .map_err(|e| Error::Image {
                path: path.clone(),
                msg: e.to_string(),
            })?
            .to_luma16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let video = out.get_or_insert_with(|| DepthVideo {
            frames,
            height: h,
            width: w,
            data: vec![0.0; frames * h * w],
        });
        if video.width != w || video.height != h {
            return Err(Error::shape(format!("{} has unexpected size", path.display())));
        }
        for (x, y, px) in img.enumerate_pixels() {
            video.data[(t * h + y as usize) * w + x as usize] =
                min + px[0] as f64 / 65535.0 * (max - min);
        }
    }
    out.ok_or_else(|| Error::shape("cannot read a depth video with zero frames"))
}

/// Contents of a frame directory's `video.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoManifest {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub kind: VideoKind,
    pub depth_range: Option<(f64, f64)>,
}

pub fn write_video_manifest(path: &Path, m: &VideoManifest) -> Result<()> {
    let mut s = format!(
        "frames={}\nheight={}\nwidth={}\nkind={}\n",
        m.frames,
        m.height,
        m.width,
        m.kind.as_str()
    );
    if let Some((lo, hi)) = m.depth_range {
        s.push_str(&format!("depth_min={lo}\ndepth_max={hi}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_video_manifest(path: &Path) -> Result<VideoManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames = None;
    let mut height = None;
    let mut width = None;
    let mut kind = None;
    let mut lo = None;
    let mut hi = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        let bad = |msg: String| Error::Parse { line: n + 1, msg };
        match k.trim() {
            "frames" => frames = Some(v.trim().parse().map_err(|e| bad(format!("frames: {e}")))?),
            "height" => height = Some(v.trim().parse().map_err(|e| bad(format!("height: {e}")))?),
            "width" => width = Some(v.trim().parse().map_err(|e| bad(format!("width: {e}")))?),
            "kind" => kind = Some(VideoKind::parse(v.trim())?),
            "depth_min" => lo = Some(v.trim().parse().map_err(|e| bad(format!("depth_min: {e}")))?),
            "depth_max" => hi = Some(v.trim().parse().map_err(|e| bad(format!("depth_max: {e}")))?),
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::Parse {
        line: 0,
        msg: format!("missing key '{k}'"),
    };
    Ok(VideoManifest {
        frames: frames.ok_or_else(|| missing("frames"))?,
        height: height.ok_or_else(|| missing("height"))?,
        width: width.ok_or_else(|| missing("width"))?,
        kind: kind.ok_or_else(|| missing("kind"))?,
        depth_range: lo.zip(hi),
    })
}
