//! Dataset access for training and evaluation: loads a subject directory,
//! regenerates the canonical template from its manifest, and provides the
//! pose-window lookup shared by the trainer, the evaluator, and the animator
//! so all three render a frame identically.

use std::path::Path;

use draper_core::body::{Camera, Pose};
use draper_core::cloth::{build_window, ClothConfig};
use draper_core::error::{Error, Result};
use draper_core::parts::PartLabel;
use draper_core::tensor::Tensor;
use draper_studio::{
    generate_subject, load_frame, load_manifest, load_track, load_views, DatasetManifest,
    DatasetPaths, FrameMaps, LabelSets, RingView,
};

use crate::model::SubjectGeometry;
use crate::Scalar;

/// Preferred per-vertex label file (written by the segmentation pipeline);
/// the dataset's reference labels are the fallback.
pub const PREDICTED_LABELS: &str = "labels.json";

/// Load a subject's per-vertex labels, preferring the predicted file over
/// the dataset reference. Returns the labels and the file name used.
pub fn load_subject_labels(dir: &Path, num_vertices: usize) -> Result<(Vec<PartLabel>, String)> {
    let predicted = dir.join(PREDICTED_LABELS);
    let (sets, source) = if predicted.is_file() {
        (LabelSets::load(&predicted)?, PREDICTED_LABELS.to_string())
    } else {
        let p = DatasetPaths::new(dir).labels();
        let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (LabelSets::load(&p)?, name)
    };
    Ok((sets.to_labels(num_vertices)?, source))
}

/// One subject's dataset, resident except for the per-frame maps.
pub struct SubjectData {
    pub seed: u64,
    pub manifest: DatasetManifest,
    pub paths: DatasetPaths,
    pub geom: SubjectGeometry,
    pub labels: Vec<PartLabel>,
    /// File the labels came from (predicted if present, else reference).
    pub labels_source: String,
    pub poses: Vec<Pose<Scalar>>,
    pub timestamps: Vec<f64>,
    pub camera: Camera<Scalar>,
}

impl SubjectData {
    /// Load a subject directory written by `gen-data`. The template mesh is
    /// regenerated bit-for-bit from the manifest seed and generator config.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = load_manifest(dir)?;
        let paths = DatasetPaths::new(dir);
        let asset = generate_subject::<Scalar>(manifest.seed, &manifest.studio)?;
        let n = asset.mesh.num_vertices();

        let (labels, labels_source) = load_subject_labels(dir, n)?;
        let is_cloth: Vec<bool> = labels.iter().map(|&l| l == PartLabel::Cloth).collect();
        let geom = SubjectGeometry::new(asset.mesh, &is_cloth);

        let (poses, camera) = load_track::<Scalar>(dir)?;
        if poses.len() != manifest.frames {
            return Err(Error::Contract(format!(
                "pose track holds {} frames, manifest says {}",
                poses.len(),
                manifest.frames
            )));
        }
        let timestamps: Vec<f64> = poses.iter().map(|p| p.timestamp).collect();
        Ok(SubjectData {
            seed: manifest.seed,
            manifest,
            paths,
            geom,
            labels,
            labels_source,
            poses,
            timestamps,
            camera,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.manifest.frames
    }

    /// Load one frame's supervision maps from disk.
    pub fn frame(&self, k: usize) -> Result<FrameMaps<Scalar>> {
        load_frame(self.paths.root(), k)
    }

    /// Rest-pose ring views (for label lifting).
    pub fn views(&self) -> Result<Vec<RingView<Scalar>>> {
        load_views(self.paths.root())
    }

    /// Every `holdout_every`-th frame is held out from training.
    pub fn is_held_out(k: usize, holdout_every: usize) -> bool {
        k.is_multiple_of(holdout_every)
    }

    /// Frames eligible for a training step: full window support (no clamped
    /// start-of-track windows) and not held out.
    pub fn trainable_frames(&self, cloth: &ClothConfig, holdout_every: usize) -> Vec<usize> {
        let t0 = self.timestamps.first().copied().unwrap_or(0.0);
        (0..self.num_frames())
            .filter(|&k| {
                self.timestamps[k] >= t0 + cloth.window_span - 1e-9
                    && !Self::is_held_out(k, holdout_every)
            })
            .collect()
    }

    /// Held-out frames (all of them; frames before the first full window are
    /// evaluated through the clamped window).
    pub fn held_out_frames(&self, holdout_every: usize) -> Vec<usize> {
        (0..self.num_frames())
            .filter(|&k| Self::is_held_out(k, holdout_every))
            .collect()
    }
}

/// Pose window for rendering at time `t`, shared by training, evaluation,
/// and animation.
pub struct FrameWindow {
    /// Pose indices, oldest first.
    pub indices: Vec<usize>,
    /// Interpolation weight between the window's last two step outputs.
    pub alpha: Scalar,
}

/// Resolve the pose window covering time `t`. Frames at `t ≥ t₀ + span` get
/// the window ending at `t` (weight 1 on the final step); earlier frames
/// share the first full window and interpolate between its last two steps.
/// A track shorter than one window span is an error.
pub fn frame_window(timestamps: &[f64], t: f64, cloth: &ClothConfig) -> Result<FrameWindow> {
    let t0 = *timestamps
        .first()
        .ok_or_else(|| Error::Boundary("empty pose track".into()))?;
    let t_end = *timestamps.last().unwrap();
    if t_end - t0 < cloth.window_span - 1e-9 {
        return Err(Error::Boundary(format!(
            "track spans {:.3} s, shorter than one {:.3} s pose window",
            t_end - t0,
            cloth.window_span
        )));
    }
    let te = if t >= t0 + cloth.window_span { t } else { t0 + cloth.window_span };
    let indices = build_window(timestamps, te, cloth)?;
    let t_prev = timestamps[indices[indices.len() - 2]];
    let mut alpha = ((t - t_prev) / cloth.window_step).clamp(0.0, 1.0);
    // frames that sit (up to rounding) on a window sample use that step
    // exactly, keeping supervision and playback bitwise reproducible
    if alpha > 1.0 - 1e-9 {
        alpha = 1.0;
    } else if alpha < 1e-9 {
        alpha = 0.0;
    }
    Ok(FrameWindow { indices, alpha })
}

/// Binary [H,W] mask selecting pixels whose segmentation palette index
/// belongs to any of `parts`.
pub fn part_mask(seg: &[u8], height: usize, width: usize, parts: &[PartLabel]) -> Tensor<Scalar> {
    assert_eq!(seg.len(), height * width);
    let data = seg
        .iter()
        .map(|&p| {
            let hit = PartLabel::from_palette_index(p).is_some_and(|l| parts.contains(&l));
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec([height, width], data)
}

/// Binary [H,W] mask of pixels the reference silhouette covers.
pub fn coverage_mask(silhouette: &Tensor<Scalar>) -> Tensor<Scalar> {
    let shape = silhouette.shape();
    assert_eq!(shape[2], 1);
    let data = silhouette.data().iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec([shape[0], shape[1]], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamps(n: usize, fps: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 / fps).collect()
    }

    fn cfg() -> ClothConfig {
        ClothConfig { window_span: 1.0, window_step: 0.2, ..ClothConfig::default() }
    }

    #[test]
    fn short_tracks_are_rejected() {
        let ts = stamps(10, 30.0); // 0.3 s
        assert!(matches!(frame_window(&ts, 0.2, &cfg()), Err(Error::Boundary(_))));
    }

    #[test]
    fn late_frames_end_their_own_window_with_unit_weight() {
        let ts = stamps(61, 30.0); // 2.0 s
        let w = frame_window(&ts, ts[45], &cfg()).unwrap();
        assert_eq!(w.indices.len(), 6);
        assert_eq!(*w.indices.last().unwrap(), 45);
        assert_eq!(w.indices[0], 45 - 30);
        assert_eq!(w.alpha, 1.0);
    }

    #[test]
    fn early_frames_share_the_first_window_and_interpolate() {
        let ts = stamps(61, 30.0);
        let first = frame_window(&ts, ts[0], &cfg()).unwrap();
        // the first full window ends at t = 1.0 s (frame 30)
        assert_eq!(*first.indices.last().unwrap(), 30);
        assert_eq!(first.alpha, 0.0);

        let mid = frame_window(&ts, ts[27], &cfg()).unwrap();
        assert_eq!(mid.indices, first.indices);
        // frame 27 sits at 0.9 s, between samples at 0.8 s and 1.0 s
        assert!((mid.alpha - 0.5).abs() < 1e-9, "alpha = {}", mid.alpha);

        let at_sample = frame_window(&ts, ts[24], &cfg()).unwrap();
        assert_eq!(at_sample.alpha, 0.0);
        let at_end = frame_window(&ts, ts[30], &cfg()).unwrap();
        assert_eq!(at_end.alpha, 1.0);
    }

    #[test]
    fn masks_pick_the_right_pixels() {
        let seg = vec![
            0,
            PartLabel::Face.palette_index(),
            PartLabel::Cloth.palette_index(),
            PartLabel::Hands.palette_index(),
        ];
        let cloth = part_mask(&seg, 2, 2, &[PartLabel::Cloth]);
        assert_eq!(cloth.data(), &[0.0, 0.0, 1.0, 0.0]);
        let fh = part_mask(&seg, 2, 2, &[PartLabel::Face, PartLabel::Hands]);
        assert_eq!(fh.data(), &[0.0, 1.0, 0.0, 1.0]);

        let sil = Tensor::from_vec([2, 2, 1], vec![0.0, 0.7, 1.0, 0.2]);
        assert_eq!(coverage_mask(&sil).data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn holdout_and_trainable_sets_partition_as_documented() {
        // synthetic SubjectData is heavy; check the frame filters directly
        let ts = stamps(61, 30.0);
        let c = cfg();
        let trainable: Vec<usize> = (0..ts.len())
            .filter(|&k| ts[k] >= c.window_span - 1e-9 && k % 10 != 0)
            .collect();
        assert!(trainable.contains(&31));
        assert!(!trainable.contains(&40), "held-out frame leaked into training");
        assert!(!trainable.contains(&29), "frame without full window support leaked");
        // frame 30 has window support but is held out (multiple of 10)
        assert!(!trainable.contains(&30) && ts[30] >= 1.0);
    }
}
