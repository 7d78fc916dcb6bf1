//! Animation playback: renders a trained avatar along a pose track — the
//! dataset's own track or a freshly generated motion — under the dataset
//! camera or a novel orbit view, optionally restricted to one part. Each
//! frame writes the full map set (RGB preview + exact floats, normals,
//! depth, silhouette), and a summary reports temporal flicker plus
//! silhouette IoU against the dataset maps when replaying the source track.

use std::fs;
use std::path::Path;

use draper_core::error::{Error, Result};
use draper_core::img::{save_flt, save_png_rgb};
use draper_core::metrics::flicker;
use draper_core::parts::PartLabel;
use draper_core::render::RasterConfig;
use draper_core::tensor::Tensor;
use draper_studio::{orbit_camera, pose_track, MotionSpec};
use serde::{Deserialize, Serialize};

use crate::data::SubjectData;
use crate::evaluate::render_on_track;
use crate::model::AvatarModel;
use crate::Scalar;

#[derive(Clone, Debug, Default)]
pub struct AnimateOptions {
    /// Replay the dataset track when absent; otherwise generate this motion.
    pub motion: Option<MotionSpec>,
    /// Frame rate for a generated motion (dataset rate when absent).
    pub fps: Option<f64>,
    /// Duration for a generated motion (dataset duration when absent).
    pub duration: Option<f64>,
    /// Render only the vertices of one part.
    pub part: Option<PartLabel>,
    /// Novel orbit camera azimuth, degrees; dataset camera when absent.
    pub azimuth_deg: Option<f64>,
    /// Orbit camera elevation, degrees (used with `azimuth_deg`).
    pub elevation_deg: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnimateSummary {
    pub frames: usize,
    /// Sliding-window temporal flicker of the rendered RGB frames.
    pub flicker: Option<f64>,
    /// Against dataset silhouettes; only set when replaying the source track
    /// with the dataset camera and no part filter.
    pub mean_silhouette_iou: Option<f64>,
    pub min_silhouette_iou: Option<f64>,
}

/// Intersection-over-union of two silhouettes at threshold ½.
pub fn silhouette_iou(a: &Tensor<Scalar>, b: &Tensor<Scalar>) -> Scalar {
    assert_eq!(a.len(), b.len());
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x > 0.5, y > 0.5);
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as Scalar / union as Scalar
    }
}

/// Render the track and write frames plus a `summary.json`.
pub fn run_animate(
    model: &AvatarModel,
    sub: &SubjectData,
    opts: &AnimateOptions,
    out_dir: &Path,
) -> Result<AnimateSummary> {
    let (poses, replay) = match opts.motion {
        None => (sub.poses.clone(), true),
        Some(m) => {
            let fps = opts.fps.unwrap_or(sub.manifest.fps);
            let duration = opts.duration.unwrap_or(sub.manifest.duration);
            (pose_track(m, fps, duration)?, false)
        }
    };
    let timestamps: Vec<f64> = poses.iter().map(|p| p.timestamp).collect();
    let (w, h) = (sub.manifest.width, sub.manifest.height);
    let raster = RasterConfig::new(w, h);
    let (camera, novel_view) = match opts.azimuth_deg {
        None => (sub.camera.clone(), false),
        Some(az) => (
            orbit_camera(&sub.geom.mesh, w, h, az.to_radians(), opts.elevation_deg.to_radians()),
            true,
        ),
    };
    let part_idx: Option<Vec<usize>> = match opts.part {
        None => None,
        Some(p) => {
            let idx: Vec<usize> = sub
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == p)
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(Error::Config(format!("subject has no `{}` vertices", p.name())));
            }
            Some(idx)
        }
    };
    let score_iou = replay && !novel_view && part_idx.is_none();

    for sub_dir in ["frames", "normal", "depth", "sil"] {
        fs::create_dir_all(out_dir.join(sub_dir)).map_err(Error::Io)?;
    }

    let mut rgb_frames = Vec::with_capacity(poses.len());
    let mut ious = Vec::new();
    for k in 0..poses.len() {
        let r = render_on_track(
            model,
            sub,
            &poses,
            &timestamps,
            k,
            &camera,
            &raster,
            part_idx.as_deref(),
        )?;
        save_png_rgb(&r.rgb, &out_dir.join(format!("frames/{k:04}.png")))?;
        save_flt(&r.rgb, &out_dir.join(format!("frames/{k:04}.flt")))?;
        save_flt(&r.normal, &out_dir.join(format!("normal/{k:04}.flt")))?;
        save_flt(&r.depth, &out_dir.join(format!("depth/{k:04}.flt")))?;
        save_flt(&r.silhouette, &out_dir.join(format!("sil/{k:04}.flt")))?;
        if score_iou {
            let maps = sub.frame(k)?;
            ious.push(silhouette_iou(&r.silhouette, &maps.silhouette));
        }
        rgb_frames.push(r.rgb);
    }

    let flicker = if rgb_frames.len() >= 2 {
        Some(flicker(&rgb_frames, 5.min(rgb_frames.len())))
    } else {
        None
    };
    let (mean_iou, min_iou) = if ious.is_empty() {
        (None, None)
    } else {
        let mean = ious.iter().sum::<Scalar>() / ious.len() as Scalar;
        let min = ious.iter().copied().fold(Scalar::INFINITY, Scalar::min);
        (Some(mean), Some(min))
    };
    let summary = AnimateSummary {
        frames: poses.len(),
        flicker,
        mean_silhouette_iou: mean_iou,
        min_silhouette_iou: min_iou,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Contract(format!("summary serialization failed: {e}")))?;
    fs::write(out_dir.join("summary.json"), json).map_err(Error::Io)?;
    Ok(summary)
}
