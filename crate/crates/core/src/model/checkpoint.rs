//! Checkpoint files.
//!
//! Binary layout (little endian): magic `DCAMCKPT`, `u32` format version,
//! `u32` record count, then per record `u32` name length, UTF-8 name, `u32`
//! rank, `u64` dims, and row-major `f32` values. A plain-text `key = value`
//! sidecar with the same stem and a `.toml` extension describes the model.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;

use super::config::{ModelConfig, SigmaSchedule};
use super::dual::DualDit;
use super::params::Params;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DCAMCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Sidecar path for a checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

/// Model structure plus free-form run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub depth_branch: bool,
    pub fusion: Option<SigmaSchedule>,
    pub extra: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn for_model(model: &DualDit) -> Self {
        Self {
            config: model.config.clone(),
            depth_branch: model.depth.is_some(),
            fusion: model.fusion.as_ref().map(|f| f.schedule()),
            extra: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        s.push_str(&format!("format_version = {FORMAT_VERSION}\n"));
        s.push_str(&format!("num_blocks = {}\n", c.num_blocks));
        s.push_str(&format!("hidden = {}\n", c.hidden));
        s.push_str(&format!("heads = {}\n", c.heads));
        s.push_str(&format!("mlp_ratio = {}\n", c.mlp_ratio));
        s.push_str(&format!("fusion_depth = {}\n", c.fusion_depth));
        s.push_str(&format!("latent_channels = {}\n", c.latent_channels));
        s.push_str(&format!("ray_channels = {}\n", c.ray_channels));
        s.push_str(&format!("vocab = {}\n", c.vocab));
        s.push_str(&format!("depth_branch = {}\n", self.depth_branch));
        let fusion = self.fusion.as_ref().map(|f| f.to_string()).unwrap_or_else(|| "none".into());
        s.push_str(&format!("fusion = \"{fusion}\"\n"));
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = \"{}\"\n", v.replace('\\', "\\\\").replace('"', "\\\"")));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected key = value, got '{line}'"),
            })?;
            let v = v.trim();
            let v = if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
                v[1..v.len() - 1].replace("\\\"", "\"").replace("\\\\", "\\")
            } else {
                v.to_string()
            };
            kv.insert(k.trim().to_string(), v);
        }
        let mut take = |k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::Checkpoint(format!("sidecar is missing '{k}'")))
        };
        let num = |k: &str, v: String| {
            v.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("sidecar '{k}' is not a count: {v}")))
        };
        let version = num("format_version", take("format_version")?)?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config = ModelConfig {
            num_blocks: num("num_blocks", take("num_blocks")?)?,
            hidden: num("hidden", take("hidden")?)?,
            heads: num("heads", take("heads")?)?,
            mlp_ratio: num("mlp_ratio", take("mlp_ratio")?)?,
            fusion_depth: num("fusion_depth", take("fusion_depth")?)?,
            latent_channels: num("latent_channels", take("latent_channels")?)?,
            ray_channels: num("ray_channels", take("ray_channels")?)?,
            vocab: num("vocab", take("vocab")?)?,
        };
        config.validate()?;
        let depth_branch = match take("depth_branch")?.as_str() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Checkpoint(format!("depth_branch must be a bool, got {other}"))),
        };
        let fusion = match take("fusion")?.as_str() {
            "none" => None,
            s => Some(SigmaSchedule::parse(s, config.num_blocks)?),
        };
        Ok(Self {
            config,
            depth_branch,
            fusion,
            extra: kv,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes named tensors into the binary container.
pub fn encode_records(records: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses the binary container.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(out)
}

/// A loaded checkpoint: the model, any extra named tensors (optimizer
/// state), and the sidecar metadata.
#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub model: DualDit,
    pub extra: BTreeMap<String, Tensor>,
    pub meta: CheckpointMeta,
}

/// Writes the model, `extra` tensors and the sidecar, each via an atomic rename.
pub fn save_checkpoint(
    path: &Path,
    model: &DualDit,
    extra: &[(String, &Tensor)],
    meta_extra: &BTreeMap<String, String>,
) -> Result<()> {
    let mut owned: Vec<(String, Tensor)> = Vec::new();
    model.visit("", &mut |name, t| owned.push((name, t.clone())));
    let mut records: Vec<(String, &Tensor)> = owned.iter().map(|(n, t)| (n.clone(), t)).collect();
    records.extend(extra.iter().map(|(n, t)| (n.clone(), *t)));
    write_atomic(path, &encode_records(&records))?;
    let mut meta = CheckpointMeta::for_model(model);
    meta.extra = meta_extra.clone();
    write_atomic(&sidecar_path(path), meta.to_text().as_bytes())
}

/// Rebuilds the model described by the sidecar and fills it from the records.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta = CheckpointMeta::parse(&text)?;
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut records: BTreeMap<String, Tensor> = decode_records(&bytes)?.into_iter().collect();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = if meta.depth_branch {
        DualDit::new(meta.config.clone(), &mut rng)?
    } else {
        DualDit::new_rgb_only(meta.config.clone(), &mut rng)?
    };
    if let Some(s) = &meta.fusion {
        model.enable_fusion(s, &mut rng)?;
    }
    let mut err = None;
    model.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match records.remove(&name) {
            Some(r) if r.shape() == t.shape() => *t = r,
            Some(r) => {
                err = Some(Error::Checkpoint(format!(
                    "{name}: stored shape {:?}, model expects {:?}",
                    r.shape(),
                    t.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing parameter {name}"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(LoadedCheckpoint {
        model,
        extra: records,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut model = DualDit::new(ModelConfig::mini(), &mut rng).unwrap();
        model.enable_fusion(&SigmaSchedule::proportional(6), &mut rng).unwrap();
        let extra_t = Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap();
        let mut meta = BTreeMap::new();
        meta.insert("step".to_string(), "12".to_string());
        save_checkpoint(&path, &model, &[("adam.step".into(), &extra_t)], &meta).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.extra["adam.step"], extra_t);
        assert_eq!(back.meta.extra["step"], "12");
        assert_eq!(back.meta.fusion, Some(SigmaSchedule::proportional(6)));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let t = Tensor::zeros(&[3]);
        let bytes = encode_records(&[("x".into(), &t)]);
        assert!(decode_records(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_records(b"NOTACKPT").is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let mut meta = CheckpointMeta {
            config: ModelConfig::mini(),
            depth_branch: false,
            fusion: None,
            extra: BTreeMap::new(),
        };
        meta.extra.insert("note".into(), "quote \" here".into());
        assert_eq!(CheckpointMeta::parse(&meta.to_text()).unwrap(), meta);
    }
}
