//! Command-line front end: configuration, subcommands and exit codes.

pub mod commands;
pub mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{AnalyzeMode, VERSION};
pub use config::RunConfig;
pub use error::{CliError, EXIT_RUNTIME, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "dualcam", version, about = "Camera-conditioned RGB-depth video diffusion at desk scale")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic training set.
    RenderData {
        /// Dataset root (overrides dataset.root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one training stage.
    Train {
        /// 1 = decoupled branches, 2 = fusion.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=2))]
        stage: u64,
        /// Continue from an intermediate checkpoint of the same stage.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stage-1 checkpoint to start stage 2 from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Run directory (overrides output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate RGB and depth frames along a camera trajectory.
    Sample {
        /// Stage-1 or stage-2 checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera trajectory text file; its frame count sets the clip length.
        #[arg(long)]
        trajectory: PathBuf,
        /// First-frame RGB condition; text-only generation when omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        /// First-frame 16-bit depth condition.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Timesteps spread evenly over the three denoising stages.
        #[arg(long)]
        base_steps: Option<usize>,
        /// Extra timesteps for --delta-stage.
        #[arg(long)]
        delta: Option<usize>,
        /// early, mid, late or none.
        #[arg(long)]
        delta_stage: Option<String>,
        /// Scene descriptor index.
        #[arg(long)]
        tag: Option<usize>,
        /// Output directory (default: <output_dir>/samples).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print rotation and translation error between two trajectory files.
    EvalPose { gt: PathBuf, pred: PathBuf },
    /// Write CKA curves or the stage-allocation sweep.
    Analyze {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (default: <output_dir>/analysis_<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Cka,
    Schedule,
}

/// Runs a parsed command and returns the line to print on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::RenderData { out } => {
            let manifest = commands::cmd_render_data(&cfg, out)?;
            Ok(manifest.display().to_string())
        }
        Command::Train {
            stage,
            resume,
            init,
            out,
        } => {
            let o = commands::cmd_train(
                &cfg,
                commands::TrainArgs {
                    stage,
                    resume,
                    init,
                    out,
                },
            )?;
            Ok(o.checkpoint.display().to_string())
        }
        Command::Sample {
            checkpoint,
            trajectory,
            image,
            depth,
            base_steps,
            delta,
            delta_stage,
            tag,
            out,
        } => {
            let dir = commands::cmd_sample(
                &cfg,
                commands::SampleArgs {
                    checkpoint,
                    trajectory,
                    image,
                    depth,
                    base_steps,
                    delta,
                    delta_stage,
                    tag,
                    out,
                },
            )?;
            Ok(dir.display().to_string())
        }
        Command::EvalPose { gt, pred } => {
            let (re, te) = commands::cmd_eval_pose(&gt, &pred)?;
            Ok(commands::format_pose_errors(re, te))
        }
        Command::Analyze { mode, checkpoint, out } => {
            let mode = match mode {
                ModeArg::Cka => AnalyzeMode::Cka,
                ModeArg::Schedule => AnalyzeMode::Schedule,
            };
            let dir = commands::cmd_analyze(&cfg, commands::AnalyzeArgs { mode, checkpoint, out })?;
            Ok(dir.display().to_string())
        }
    }
}
