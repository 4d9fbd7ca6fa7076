//! The subcommands. Each writes `run.toml` (tool version, seed and the fully
//! resolved configuration) next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dualcam::analysis::{
    cka_report_notes, cka_vs_stage_report, generate_video, save_line_chart, stage_allocation_sweep, sweep_configurations,
    sweep_to_csv, AlignConfig, EvalClip, SweepRow,
};
use dualcam::camera::{parse_trajectory, rotation_error, serialize_trajectory, translation_error, CameraTrajectory};
use dualcam::codec::{
    latent_frames, write_depth_frames, write_rgb_frames, write_video_manifest, CodecConfig, CodecMode, DepthVideo,
    LatentCodec, LatentTensor, VideoKind, VideoManifest, VideoTensor,
};
use dualcam::diffusion::{
    batch_loss, begin_fusion_stage, build_timestep_schedule, condition_latents, log_to_csv, prepare_example, ray_features,
    LogRow, Stage, TrainStage, TrainState, TrainingExample, LOG_HEADER,
};
use dualcam::model::{load_checkpoint, DualDit, LoadedCheckpoint};
use dualcam::scenes::{generate_clip, load_dataset, make_dataset};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RUN_RECORD: &str = "run.toml";

const TAG_MODEL_INIT: u64 = 0x1417;

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))
}

pub fn write_run_record(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let record = RunRecord {
        tool: "dualcam",
        version: VERSION,
        command,
        seed: cfg.seed,
        config: cfg,
    };
    let text = toml::to_string(&record).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&dir.join(RUN_RECORD), text)
}

/// Renders the synthetic dataset and returns the manifest path.
pub fn cmd_render_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(o) = out {
        cfg.dataset.root = o;
    }
    cfg.validate()?;
    let d = &cfg.dataset;
    let manifest = make_dataset(&d.root, d.clips, d.frames, d.height, d.width, cfg.seed)?;
    write_run_record(&d.root, "render-data", &cfg)?;
    Ok(manifest)
}

fn load_examples(cfg: &RunConfig, codec: &LatentCodec) -> Result<Vec<TrainingExample>> {
    let root = &cfg.dataset.root;
    let clips = load_dataset(root).map_err(|e| CliError::from(e).context(format!("loading dataset {}", root.display())))?;
    clips
        .iter()
        .map(|c| {
            if c.entry.frames != cfg.dataset.frames {
                return Err(CliError::usage(format!(
                    "{} has {} frames but dataset.frames is {}",
                    c.entry.id, c.entry.frames, cfg.dataset.frames
                )));
            }
            Ok(prepare_example(codec, &c.rgb, &c.depth, &c.trajectory, c.entry.descriptor)?)
        })
        .collect()
}

fn codec_meta(c: &CodecConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("codec_mode".to_string(), c.mode.as_str().to_string()),
        ("codec_channels".to_string(), c.channels.to_string()),
        ("codec_seed".to_string(), c.seed.to_string()),
    ])
}

/// Codec recorded in a checkpoint, falling back to the configured one.
fn checkpoint_codec(ck: &LoadedCheckpoint, cfg: &RunConfig) -> Result<LatentCodec> {
    let configured = cfg.codec_config()?;
    let e = &ck.meta.extra;
    let recorded = match (e.get("codec_mode"), e.get("codec_channels"), e.get("codec_seed")) {
        (Some(m), Some(c), Some(s)) => CodecConfig {
            mode: CodecMode::parse(m)?,
            channels: c.parse().map_err(|_| CliError::runtime("bad codec_channels in checkpoint"))?,
            seed: s.parse().map_err(|_| CliError::runtime("bad codec_seed in checkpoint"))?,
        },
        _ => configured,
    };
    if recorded != configured {
        log::warn!("checkpoint codec {recorded:?} differs from the configured one; using the checkpoint's");
    }
    Ok(LatentCodec::new(recorded)?)
}

fn load_model(path: &Path) -> Result<LoadedCheckpoint> {
    if !path.exists() {
        return Err(CliError::runtime(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

pub struct TrainArgs {
    pub stage: u64,
    pub resume: Option<PathBuf>,
    /// Stage-1 checkpoint for stage 2 (default `<out>/stage1.ckpt`).
    pub init: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub rows: Vec<LogRow>,
}

pub fn checkpoint_path(out: &Path, stage: TrainStage) -> PathBuf {
    out.join(format!("stage{}.ckpt", stage.number()))
}

fn log_path(out: &Path, stage: TrainStage) -> PathBuf {
    out.join(format!("stage{}_log.csv", stage.number()))
}

/// Log lines of an earlier run for steps before `next_step`.
fn previous_log_lines(path: &Path, next_step: usize) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s < next_step))
        .map(str::to_string)
        .collect()
}

pub fn cmd_train(cfg: &RunConfig, args: TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    if let Some(o) = args.out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let stage = TrainStage::from_number(args.stage).map_err(|_| CliError::usage("--stage must be 1 or 2"))?;
    let tc = cfg.train_config()?;
    let codec_cfg = cfg.codec_config()?;
    let codec = LatentCodec::new(codec_cfg)?;
    let data = load_examples(&cfg, &codec)?;
    create_dir(&out)?;

    let mut handoff = None;
    let mut state = match (&args.resume, stage) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(CliError::runtime(format!("resume checkpoint {} does not exist", path.display())));
            }
            let st = TrainState::load(path, tc.adam)?;
            if st.stage != stage {
                return Err(CliError::usage(format!(
                    "{} holds a stage-{} state, not stage {}",
                    path.display(),
                    st.stage.number(),
                    stage.number()
                )));
            }
            st
        }
        (None, TrainStage::Decoupled) => {
            let mut rng = dualcam::rng::stream(cfg.seed, &[TAG_MODEL_INIT]);
            let model = if cfg.model.depth_branch {
                DualDit::new(cfg.model_config()?, &mut rng)?
            } else {
                DualDit::new_rgb_only(cfg.model_config()?, &mut rng)?
            };
            TrainState::new(model, &tc, stage)?
        }
        (None, TrainStage::Fusion) => {
            let init = args.init.clone().unwrap_or_else(|| checkpoint_path(&out, TrainStage::Decoupled));
            if !init.exists() {
                return Err(CliError::runtime(format!(
                    "stage 2 needs a stage-1 checkpoint; {} does not exist",
                    init.display()
                )));
            }
            let stage1 = load_checkpoint(&init)?.model;
            let model = begin_fusion_stage(&stage1, &cfg.sigma_schedule()?, cfg.seed)?;
            handoff = Some(batch_loss(&stage1, &data, &tc, TrainStage::Fusion, 0, false)?);
            TrainState::new(model, &tc, stage)?
        }
    };

    let total = tc.steps(stage);
    let log_file = log_path(&out, stage);
    let mut lines = if args.resume.is_some() {
        previous_log_lines(&log_file, state.next_step)
    } else {
        Vec::new()
    };
    let mut rows = Vec::new();
    let mut meta = codec_meta(&codec_cfg);
    meta.insert("seed".into(), cfg.seed.to_string());
    while state.next_step < total {
        let row = state.step(&data, &tc)?;
        if row.step % 50 == 0 || row.step + 1 == total {
            log::info!("stage {} step {}/{} loss {:.5}", stage.number(), row.step + 1, total, row.l_total);
        }
        lines.push(row.csv_line());
        rows.push(row);
        let every = cfg.train.checkpoint_every;
        if every > 0 && state.next_step % every == 0 && state.next_step < total {
            let p = out.join(format!("stage{}_step{:06}.ckpt", stage.number(), state.next_step));
            state.save(&p, &meta)?;
        }
    }
    if let (Some(expected), Some(first)) = (handoff, rows.first()) {
        let exact = first.l_total.to_bits() == expected.total.to_bits();
        write_file(
            &out.join("stage2_handoff.txt"),
            format!(
                "first_stage2_loss = {:?}\ngamma0_loss = {:?}\nbit_exact = {exact}\n",
                first.l_total, expected.total
            ),
        )?;
        if !exact {
            log::warn!("first stage-2 loss differs from the gamma=0 loss");
        }
    }
    let checkpoint = checkpoint_path(&out, stage);
    state.save(&checkpoint, &meta)?;
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for l in &lines {
        text.push_str(l);
        text.push('\n');
    }
    debug_assert!(args.resume.is_some() || text == log_to_csv(&rows));
    write_file(&log_file, text)?;
    write_run_record(&out, &format!("train --stage {}", stage.number()), &cfg)?;
    Ok(TrainOutcome {
        checkpoint,
        log: log_file,
        rows,
    })
}

pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub trajectory: PathBuf,
    pub image: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub base_steps: Option<usize>,
    pub delta: Option<usize>,
    pub delta_stage: Option<String>,
    pub tag: Option<usize>,
    pub out: Option<PathBuf>,
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::runtime(format!("cannot read image {}: {e}", path.display()))
}

fn read_condition_image(path: &Path, height: usize, width: usize) -> Result<VideoTensor> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    if img.width() as usize != width || img.height() as usize != height {
        return Err(CliError::usage(format!(
            "{} is {}x{}, the trajectory is {width}x{height}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    let mut v = VideoTensor::zeros(1, height, width, VideoKind::Rgb);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            let i = v.index(0, c, y as usize, x as usize);
            v.data[i] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Ok(v)
}

/// A 16-bit depth image; only relative values matter because the depth
/// condition is range-normalized.
fn read_condition_depth(path: &Path, height: usize, width: usize) -> Result<DepthVideo> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma16();
    if img.width() as usize != width || img.height() as usize != height {
        return Err(CliError::usage(format!("{} does not match the trajectory size", path.display())));
    }
    Ok(DepthVideo {
        frames: 1,
        height,
        width,
        data: img.pixels().map(|p| p[0] as f64).collect(),
    })
}

/// Mean over the three replicated channels of a decoded depth video.
fn depth_from_video(v: &VideoTensor) -> DepthVideo {
    let mut data = Vec::with_capacity(v.frames * v.height * v.width);
    for t in 0..v.frames {
        for y in 0..v.height {
            for x in 0..v.width {
                data.push((0..3).map(|c| v.at(t, c, y, x)).sum::<f64>() / 3.0);
            }
        }
    }
    DepthVideo {
        frames: v.frames,
        height: v.height,
        width: v.width,
        data,
    }
}

pub fn cmd_sample(cfg: &RunConfig, args: SampleArgs) -> Result<PathBuf> {
    let mut cfg = cfg.clone();
    if let Some(b) = args.base_steps {
        cfg.sample.base_steps = b;
    }
    if let Some(d) = args.delta {
        cfg.sample.delta = d;
    }
    if let Some(s) = args.delta_stage {
        cfg.sample.delta_stage = s;
    }
    if let Some(t) = args.tag {
        cfg.sample.tag = t;
    }
    let out = args.out.unwrap_or_else(|| cfg.output_dir.join("samples"));
    cfg.validate()?;
    let schedule = build_timestep_schedule(cfg.sample.base_steps, cfg.sample.delta, cfg.delta_stage()?)?;

    let traj = parse_trajectory(&read_file(&args.trajectory)?)
        .map_err(|e| CliError::from(e).context(format!("parsing {}", args.trajectory.display())))?;
    if traj.frame_count() != cfg.dataset.frames {
        return Err(CliError::usage(format!(
            "trajectory has {} frames but dataset.frames is {}",
            traj.frame_count(),
            cfg.dataset.frames
        )));
    }
    let (h, w) = (traj.height(), traj.width());
    let ck = load_model(&args.checkpoint)?;
    let codec = checkpoint_codec(&ck, &cfg)?;
    let model = ck.model;
    if cfg.sample.tag >= model.config.vocab {
        return Err(CliError::usage(format!("tag {} outside the model vocabulary", cfg.sample.tag)));
    }
    let image = args.image.as_deref().map(|p| read_condition_image(p, h, w)).transpose()?;
    let depth = args.depth.as_deref().map(|p| read_condition_depth(p, h, w)).transpose()?;
    let tf = latent_frames(traj.frame_count())?;
    let (cond_rgb, cond_depth) = condition_latents(&codec, image.as_ref(), depth.as_ref(), tf, h, w)?;
    let c = codec.channels();
    let f = dualcam::codec::SPATIAL_FACTOR;
    let example = TrainingExample {
        cond_rgb,
        cond_depth,
        ray_features: ray_features(&traj, h, w)?,
        z0_rgb: LatentTensor::zeros(tf, c, h / f, w / f),
        z0_depth: LatentTensor::zeros(tf, c, h / f, w / f),
        tag: cfg.sample.tag,
    };
    let video = generate_video(&model, &codec, &example, &schedule, cfg.seed)?;

    create_dir(&out)?;
    write_rgb_frames(&out, "frame", &video.rgb)?;
    let depth_range = match &video.depth {
        Some(d) => Some(write_depth_frames(&out, "depth", &depth_from_video(d))?),
        None => None,
    };
    write_video_manifest(
        &out.join("video.txt"),
        &VideoManifest {
            frames: video.rgb.frames,
            height: h,
            width: w,
            kind: VideoKind::Rgb,
            depth_range,
        },
    )?;
    write_file(&out.join("trajectory.txt"), serialize_trajectory(&traj))?;
    write_file(&out.join("schedule.csv"), schedule.to_csv())?;
    write_run_record(&out, "sample", &cfg)?;
    Ok(out)
}

fn read_trajectory(path: &Path) -> Result<CameraTrajectory> {
    parse_trajectory(&read_file(path)?).map_err(|e| CliError::from(e).context(format!("parsing {}", path.display())))
}

/// `(RE in degrees, TE)` between two trajectory files.
pub fn cmd_eval_pose(gt: &Path, pred: &Path) -> Result<(f64, f64)> {
    let a = read_trajectory(gt)?;
    let b = read_trajectory(pred)?;
    Ok((rotation_error(&a, &b)?, translation_error(&a, &b)?))
}

pub fn format_pose_errors(re: f64, te: f64) -> String {
    format!("RE={re:.4} TE={te:.4}")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalyzeMode {
    Cka,
    Schedule,
}

impl AnalyzeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalyzeMode::Cka => "cka",
            AnalyzeMode::Schedule => "schedule",
        }
    }
}

pub struct AnalyzeArgs {
    pub mode: AnalyzeMode,
    pub checkpoint: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn cmd_analyze(cfg: &RunConfig, args: AnalyzeArgs) -> Result<PathBuf> {
    cfg.validate()?;
    let out = args
        .out
        .unwrap_or_else(|| cfg.output_dir.join(format!("analysis_{}", args.mode.as_str())));
    let ck = load_model(&args.checkpoint)?;
    let codec = checkpoint_codec(&ck, cfg)?;
    let model = ck.model;
    create_dir(&out)?;
    match args.mode {
        AnalyzeMode::Cka => analyze_cka(cfg, &model, &codec, &out)?,
        AnalyzeMode::Schedule => analyze_schedule(cfg, &model, &codec, &out)?,
    }
    write_run_record(&out, &format!("analyze --mode {}", args.mode.as_str()), cfg)?;
    Ok(out)
}

fn analyze_cka(cfg: &RunConfig, model: &DualDit, codec: &LatentCodec, out: &Path) -> Result<()> {
    let mut examples = load_examples(cfg, codec)?;
    examples.truncate(cfg.analysis.cka_clips.max(1));
    let schedule = build_timestep_schedule(cfg.analysis.cka_steps, 0, None)?;
    let curves = cka_vs_stage_report(model, &examples, &schedule, cfg.seed)?;
    for curve in &curves {
        write_file(&out.join(format!("{}.csv", curve.name())), curve.to_csv())?;
        if cfg.analysis.plots {
            // one line per stage: pooled CKA against layer index
            let series: Vec<Vec<(f64, f64)>> = Stage::ALL
                .iter()
                .map(|&st| {
                    curve
                        .rows
                        .iter()
                        .filter(|r| r.stage == st && r.t.is_none())
                        .map(|r| (r.layer as f64, r.mean))
                        .collect()
                })
                .collect();
            save_line_chart(&out.join(format!("{}.png", curve.name())), &series)?;
        }
    }
    write_file(&out.join("cka_notes.txt"), cka_report_notes(&schedule, examples.len(), cfg.seed))?;
    write_file(&out.join("schedule.csv"), schedule.to_csv())?;
    Ok(())
}

/// Held-out clips rendered with `analysis.eval_seed`.
pub fn held_out_clips(cfg: &RunConfig, codec: &LatentCodec) -> Result<Vec<EvalClip>> {
    let d = &cfg.dataset;
    (0..cfg.analysis.eval_clips)
        .map(|i| {
            let c = generate_clip(cfg.analysis.eval_seed, i, d.frames, d.height, d.width)?.clip;
            Ok(EvalClip {
                example: prepare_example(codec, &c.rgb, &c.depth, &c.trajectory, c.tag)?,
                rgb: c.rgb,
                depth: c.depth,
                trajectory: c.trajectory,
            })
        })
        .collect()
}

fn analyze_schedule(cfg: &RunConfig, model: &DualDit, codec: &LatentCodec, out: &Path) -> Result<()> {
    let clips = held_out_clips(cfg, codec)?;
    let a = &cfg.analysis;
    let base = cfg.sample.base_steps;
    let rows = stage_allocation_sweep(model, codec, &clips, base, &a.deltas, &Stage::ALL, &a.seeds, &AlignConfig::default())?;
    write_file(&out.join("sweep.csv"), sweep_to_csv(&rows))?;
    let mut sched = String::from("stage,delta,index,t\n");
    for (stage, delta) in sweep_configurations(&a.deltas, &Stage::ALL) {
        let s = build_timestep_schedule(base, delta, stage)?;
        let name = stage.map_or("none", Stage::as_str);
        for (i, t) in s.timesteps().iter().enumerate() {
            sched.push_str(&format!("{name},{delta},{i},{t:?}\n"));
        }
    }
    write_file(&out.join("schedules.csv"), sched)?;
    if a.plots {
        save_line_chart(&out.join("sweep_re.png"), &re_by_delta(&rows))?;
    }
    Ok(())
}

/// Mean RE over seeds against Δ, one line per stage; Δ = 0 is shared.
fn re_by_delta(rows: &[SweepRow]) -> Vec<Vec<(f64, f64)>> {
    let mean_re = |stage: Option<Stage>, delta: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.stage == stage && r.delta == delta).map(|r| r.re).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut deltas: Vec<usize> = rows.iter().map(|r| r.delta).collect();
    deltas.sort_unstable();
    deltas.dedup();
    Stage::ALL
        .iter()
        .map(|&st| {
            deltas
                .iter()
                .filter_map(|&d| {
                    let stage = if d == 0 { None } else { Some(st) };
                    mean_re(stage, d).map(|re| (d as f64, re))
                })
                .collect()
        })
        .collect()
}
