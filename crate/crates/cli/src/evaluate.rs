//! Held-out evaluation: renders dataset frames through the trained model and
//! scores them against the stored supervision maps. The single-frame render
//! path here is also what the animator uses, so evaluation and playback of
//! the same frame are bit-identical.

use std::fs;
use std::path::Path;

use draper_core::body::{Camera, Pose};
use draper_core::error::{Error, Result};
use draper_core::graph::Graph;
use draper_core::loss::perceptual_loss;
use draper_core::metrics::{psnr, ssim};
use draper_core::render::RasterConfig;
use draper_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{frame_window, SubjectData};
use crate::model::AvatarModel;
use crate::Scalar;

/// Plain-valued maps of one rendered frame.
pub struct RenderedFrame {
    pub rgb: Tensor<Scalar>,
    /// Encoded (n+1)/2 normals, matching the dataset files.
    pub normal: Tensor<Scalar>,
    pub depth: Tensor<Scalar>,
    pub silhouette: Tensor<Scalar>,
}

/// Render frame `k` of an arbitrary pose track (which may be novel — only
/// the subject's geometry and latent come from the dataset). The cloth
/// window is resolved exactly as in training: frames past the first window
/// span end their own window, earlier frames interpolate within the first
/// full window.
#[allow(clippy::too_many_arguments)]
pub fn render_on_track(
    model: &AvatarModel,
    sub: &SubjectData,
    poses: &[Pose<Scalar>],
    timestamps: &[f64],
    k: usize,
    camera: &Camera<Scalar>,
    raster: &RasterConfig<Scalar>,
    part_filter: Option<&[usize]>,
) -> Result<RenderedFrame> {
    let t = timestamps[k];
    let pose = &poses[k];
    let window = frame_window(timestamps, t, &model.spec.cloth)?;
    let wposes: Vec<&Pose<Scalar>> = window.indices.iter().map(|&i| &poses[i]).collect();
    let mut g = Graph::new();
    let bind = model.store.bind(&mut g);
    let (out, _) = model.forward_frame(
        &mut g,
        &bind,
        sub.seed,
        &sub.geom,
        &wposes,
        window.alpha,
        pose,
        camera,
        raster,
        part_filter,
    )?;
    Ok(RenderedFrame {
        rgb: g.value(out.rgb).clone(),
        normal: g.value(out.normal).clone(),
        depth: g.value(out.depth).clone(),
        silhouette: g.value(out.silhouette).clone(),
    })
}

/// Render dataset frame `k` under its own pose and the dataset camera.
pub fn render_track_frame(
    model: &AvatarModel,
    sub: &SubjectData,
    k: usize,
    part_filter: Option<&[usize]>,
) -> Result<RenderedFrame> {
    let raster = RasterConfig::new(sub.manifest.width, sub.manifest.height);
    render_on_track(model, sub, &sub.poses, &sub.timestamps, k, &sub.camera, &raster, part_filter)
}

/// Mean L1 distance between gradient-magnitude pyramids (the training
/// perceptual term, evaluated as a metric).
pub fn perceptual_distance(pred: &Tensor<Scalar>, target: &Tensor<Scalar>) -> Scalar {
    let mut g = Graph::new();
    let a = g.constant(pred.clone());
    let b = g.constant(target.clone());
    let d = perceptual_loss(&mut g, a, b);
    g.value(d).data()[0]
}

/// Which dataset frames to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameSet {
    HeldOut,
    Train,
    All,
}

impl FrameSet {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "held-out" | "heldout" => Ok(FrameSet::HeldOut),
            "train" => Ok(FrameSet::Train),
            "all" => Ok(FrameSet::All),
            other => Err(Error::Config(format!(
                "unknown frame set `{other}` (expected held-out, train, or all)"
            ))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeanScores {
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub subject: u64,
    pub frame_set: String,
    pub count: usize,
    pub mean: MeanScores,
    pub frames: Vec<FrameScore>,
}

/// Frames belonging to a set. Held-out membership is purely positional
/// (every `holdout_every`-th frame), matching the trainer's split.
pub fn select_frames(sub: &SubjectData, set: FrameSet, holdout_every: usize) -> Vec<usize> {
    (0..sub.num_frames())
        .filter(|&k| match set {
            FrameSet::All => true,
            FrameSet::HeldOut => SubjectData::is_held_out(k, holdout_every),
            FrameSet::Train => !SubjectData::is_held_out(k, holdout_every),
        })
        .collect()
}

/// Score one frame set; per-frame scores plus arithmetic means.
pub fn evaluate_subject(
    model: &AvatarModel,
    sub: &SubjectData,
    set: FrameSet,
    holdout_every: usize,
) -> Result<EvalReport> {
    let frames = select_frames(sub, set, holdout_every);
    if frames.is_empty() {
        return Err(Error::Config("frame set selects no frames".into()));
    }
    let mut scores = Vec::with_capacity(frames.len());
    let mut sums = [0.0f64; 3];
    for &k in &frames {
        let rendered = render_track_frame(model, sub, k, None)?;
        let maps = sub.frame(k)?;
        let s = FrameScore {
            frame: k,
            psnr: psnr(&rendered.rgb, &maps.rgb),
            ssim: ssim(&rendered.rgb, &maps.rgb),
            perceptual: perceptual_distance(&rendered.rgb, &maps.rgb),
        };
        sums[0] += s.psnr;
        sums[1] += s.ssim;
        sums[2] += s.perceptual;
        scores.push(s);
    }
    let n = scores.len() as f64;
    Ok(EvalReport {
        subject: sub.seed,
        frame_set: match set {
            FrameSet::HeldOut => "held-out",
            FrameSet::Train => "train",
            FrameSet::All => "all",
        }
        .to_string(),
        count: scores.len(),
        mean: MeanScores { psnr: sums[0] / n, ssim: sums[1] / n, perceptual: sums[2] / n },
        frames: scores,
    })
}

/// Write the report as JSON plus a per-frame CSV.
pub fn write_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(Error::Io)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Contract(format!("report serialization failed: {e}")))?;
    fs::write(out_dir.join("evaluation.json"), json).map_err(Error::Io)?;
    let mut csv = String::from("frame,psnr,ssim,perceptual\n");
    for f in &report.frames {
        csv.push_str(&format!("{},{},{},{}\n", f.frame, f.psnr, f.ssim, f.perceptual));
    }
    fs::write(out_dir.join("evaluation.csv"), csv).map_err(Error::Io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use draper_core::metrics::PSNR_SENTINEL_DB;

    #[test]
    fn psnr_contract_holds_for_the_metrics_this_report_uses() {
        let img =
            Tensor::from_vec([16, 16, 3], (0..768).map(|i| (i as f64) / 1000.0).collect());
        assert_eq!(psnr(&img, &img), PSNR_SENTINEL_DB);
        let mut off = img.clone();
        for v in off.data_mut() {
            *v += 0.1;
        }
        assert!((psnr(&off, &img) - 20.0).abs() < 1e-9);
        assert!(perceptual_distance(&img, &img).abs() < 1e-12);
    }

    #[test]
    fn frame_sets_partition_the_track() {
        let sets = |n: usize, every: usize| {
            let held: Vec<usize> = (0..n).filter(|&k| k % every == 0).collect();
            let train: Vec<usize> = (0..n).filter(|&k| k % every != 0).collect();
            (held, train)
        };
        let (held, train) = sets(25, 10);
        assert_eq!(held, vec![0, 10, 20]);
        assert_eq!(held.len() + train.len(), 25);
        assert!(FrameSet::parse("held-out").is_ok());
        assert!(FrameSet::parse("nope").is_err());
    }
}
