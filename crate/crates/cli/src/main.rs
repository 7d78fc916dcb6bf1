//! `draper` — synthetic clothed-avatar pipeline: dataset generation, part
//! segmentation, two-stage training, evaluation, animation, clothing
//! transfer, and the gradient checker.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use draper_cli::animate::{run_animate, AnimateOptions};
use draper_cli::checkpoint::Checkpoint;
use draper_cli::config::{load_config, out_root};
use draper_cli::data::SubjectData;
use draper_cli::evaluate::{evaluate_subject, write_report, FrameSet};
use draper_cli::model::{AvatarModel, ModelSpec};
use draper_cli::segment::{run_segment, SegmentOptions};
use draper_cli::train::run_training;
use draper_cli::transfer::{run_transfer, TransferOptions};
use draper_core::parts::PartLabel;
use draper_studio::{subject_dir_name, write_dataset, MotionSpec, SequenceSpec, StudioConfig};

#[derive(Parser)]
#[command(
    name = "draper",
    version,
    about = "Differentiable clothed-avatar pipeline on synthetic monocular data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file mirroring the training-config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. --set model.resolution=64 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic monocular datasets (one directory per subject).
    GenData {
        /// Output root; subject directories are created inside.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subject seeds.
        #[arg(long, default_value = "1")]
        seeds: String,
        /// Motion: idle-sway, walk, arm-wave, or spin.
        #[arg(long, default_value = "walk")]
        motion: String,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Sequence length in seconds.
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Gaussian noise added to normal/depth supervision maps.
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
        /// Rest-pose ring views for label lifting.
        #[arg(long, default_value_t = 8)]
        views: usize,
        #[arg(long, default_value_t = 128)]
        view_resolution: usize,
        /// Mesh subdivision level (0–3).
        #[arg(long, default_value_t = 1)]
        subdivision: usize,
    },
    /// Lift part labels from the ring views and write labels.json.
    Segment {
        /// Subject dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint providing plane features (fresh model when absent).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Classifier distillation steps.
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        learning_rate: f64,
    },
    /// Train stage 1 (multi-subject) or stage 2 (single-subject).
    Train {
        /// Overrides the config's stage.
        #[arg(long)]
        stage: Option<u8>,
        /// Root directory holding subject_<seed> datasets.
        #[arg(long)]
        data_root: PathBuf,
        /// Output directory (checkpoints, loss log).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume/initialize from this checkpoint (overrides the config).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score rendered frames against dataset maps (JSON + CSV).
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// held-out, train, or all.
        #[arg(long, default_value = "held-out")]
        frames: String,
        /// Held-out stride; must match training.
        #[arg(long, default_value_t = 10)]
        holdout_every: usize,
    },
    /// Render a pose track to a frame directory.
    Animate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Generate this motion instead of replaying the dataset track.
        #[arg(long)]
        motion: Option<String>,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
        /// Render only one part: face, hands, cloth, or body.
        #[arg(long)]
        part: Option<String>,
        /// Novel orbit camera azimuth in degrees.
        #[arg(long)]
        azimuth: Option<f64>,
        /// Orbit camera elevation in degrees.
        #[arg(long, default_value_t = 0.0)]
        elevation: f64,
    },
    /// Move the source subject's clothing onto the target subject.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "walk")]
        motion: String,
        #[arg(long, default_value_t = 10.0)]
        fps: f64,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
    },
    /// Finite-difference checks for every registered differentiable op.
    Gradcheck {
        /// Only run checks whose name contains this substring.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| anyhow!("bad seed `{p}`: {e}")))
        .collect()
}

fn parse_part(s: &str) -> anyhow::Result<PartLabel> {
    PartLabel::ALL
        .into_iter()
        .find(|l| l.name() == s)
        .ok_or_else(|| anyhow!("unknown part `{s}` (expected face, hands, cloth, or body)"))
}

fn load_model(path: &Path, subject: u64) -> anyhow::Result<AvatarModel> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = AvatarModel::from_checkpoint(&ck)?;
    model
        .latent(subject)
        .with_context(|| format!("checkpoint {} has no latent for subject {subject}", path.display()))?;
    Ok(model)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::GenData {
            out,
            seeds,
            motion,
            fps,
            duration,
            width,
            height,
            noise_sigma,
            views,
            view_resolution,
            subdivision,
        } => {
            let root = out.unwrap_or_else(|| out_root(None).join("data"));
            let motion = MotionSpec::parse(&motion)?;
            let studio = StudioConfig { subdivision, ..StudioConfig::default() };
            for seed in parse_seeds(&seeds)? {
                let spec = SequenceSpec {
                    seed,
                    motion,
                    fps,
                    duration,
                    width,
                    height,
                    noise_sigma,
                    views,
                    view_resolution,
                };
                let dir = root.join(subject_dir_name(seed));
                let manifest = write_dataset::<draper_cli::Scalar>(&dir, &studio, &spec)?;
                println!(
                    "subject {seed}: {} frames at {}x{} -> {}",
                    manifest.frames,
                    manifest.width,
                    manifest.height,
                    dir.display()
                );
            }
            Ok(())
        }
        Cmd::Segment { data, checkpoint, cfg, steps, learning_rate } => {
            let sub = SubjectData::load(&data)?;
            let mut model = match checkpoint {
                Some(path) => load_model(&path, sub.seed)?,
                None => {
                    let mut tc = load_config(cfg.config.as_deref(), &cfg.sets)?;
                    tc.subjects = vec![sub.seed];
                    AvatarModel::new(ModelSpec::from_config(&tc))?
                }
            };
            let opts = SegmentOptions { steps, learning_rate, ..SegmentOptions::default() };
            let report = run_segment(&mut model, &sub, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Train { stage, data_root, out, checkpoint, cfg } => {
            let mut tc = load_config(cfg.config.as_deref(), &cfg.sets)?;
            if let Some(s) = stage {
                tc.stage = s;
            }
            if let Some(ck) = checkpoint {
                tc.checkpoint = Some(ck);
            }
            let out_dir = out.unwrap_or_else(|| out_root(None).join("train"));
            let outcome = run_training(&tc, &data_root, &out_dir)?;
            println!(
                "trained {} steps (total {}); checkpoint {}",
                outcome.steps_run,
                outcome.final_step,
                outcome.checkpoint.display()
            );
            Ok(())
        }
        Cmd::Evaluate { data, checkpoint, out, frames, holdout_every } => {
            let sub = SubjectData::load(&data)?;
            let model = load_model(&checkpoint, sub.seed)?;
            let set = FrameSet::parse(&frames)?;
            let report = evaluate_subject(&model, &sub, set, holdout_every)?;
            let out_dir = out.unwrap_or_else(|| out_root(None).join("eval"));
            write_report(&report, &out_dir)?;
            println!(
                "{} frames ({}): PSNR {:.2} dB, SSIM {:.4}, perceptual {:.5} -> {}",
                report.count,
                report.frame_set,
                report.mean.psnr,
                report.mean.ssim,
                report.mean.perceptual,
                out_dir.display()
            );
            Ok(())
        }
        Cmd::Animate {
            data,
            checkpoint,
            out,
            motion,
            fps,
            duration,
            part,
            azimuth,
            elevation,
        } => {
            let sub = SubjectData::load(&data)?;
            let model = load_model(&checkpoint, sub.seed)?;
            let opts = AnimateOptions {
                motion: motion.as_deref().map(MotionSpec::parse).transpose()?,
                fps,
                duration,
                part: part.as_deref().map(parse_part).transpose()?,
                azimuth_deg: azimuth,
                elevation_deg: elevation,
            };
            let out_dir = out.unwrap_or_else(|| out_root(None).join("anim"));
            let summary = run_animate(&model, &sub, &opts, &out_dir)?;
            println!(
                "{} frames -> {}{}",
                summary.frames,
                out_dir.display(),
                summary
                    .flicker
                    .map(|f| format!(" (flicker {f:.2e})"))
                    .unwrap_or_default()
            );
            Ok(())
        }
        Cmd::Transfer { source, target, out, motion, fps, duration, width, height } => {
            let opts = TransferOptions {
                motion: MotionSpec::parse(&motion)?,
                fps,
                duration,
                width,
                height,
            };
            let out_dir = out.unwrap_or_else(|| out_root(None).join("transfer"));
            let report = run_transfer(&source, &target, &out_dir, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Cmd::Gradcheck { filter } => {
            let mut failures = 0usize;
            let mut ran = 0usize;
            for check in draper_core::gradcheck::registry() {
                if let Some(f) = &filter {
                    if !check.name.contains(f.as_str()) {
                        continue;
                    }
                }
                ran += 1;
                let report = (check.run)();
                println!("{}", report.line());
                if !report.pass() {
                    failures += 1;
                }
            }
            if filter.is_none() {
                let control = draper_core::gradcheck::negative_control();
                let caught = !control.pass();
                println!(
                    "negative control (sign-flipped gradient): {}",
                    if caught { "correctly rejected" } else { "NOT rejected" }
                );
                if !caught {
                    failures += 1;
                }
            }
            if ran == 0 {
                bail!("no gradient checks matched the filter");
            }
            if failures > 0 {
                bail!("{failures} gradient check(s) failed");
            }
            println!("all {ran} gradient checks passed");
            Ok(())
        }
    }
}
