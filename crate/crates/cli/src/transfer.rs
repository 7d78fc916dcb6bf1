//! Clothing transfer between two decomposed avatars: the source's cloth
//! vertices are rescaled to the target torso, re-bound to the target's
//! skinning, and merged with the target's face/hands/body — which carry over
//! bitwise. The transferred avatar is saved (mesh, labels, provenance) and
//! rendered along a pose track; its silhouette must track the target body,
//! which the report quantifies as per-frame IoU.

use std::fs;
use std::path::{Path, PathBuf};

use draper_core::body::{lbs_deform_plain, save_mesh, vertex_normals_plain, Pose};
use draper_core::error::{Error, Result};
use draper_core::img::{save_flt, save_png_rgb};
use draper_core::parts::{transfer_clothing, PartLabel};
use draper_core::render::{render_gaussians_plain, RasterConfig};
use draper_core::tensor::Tensor;
use draper_studio::{
    frame_camera, generate_subject, load_manifest, pose_track, MotionSpec, SubjectAsset,
};
use serde::{Deserialize, Serialize};

use crate::animate::silhouette_iou;
use crate::data::load_subject_labels;
use crate::Scalar;

#[derive(Clone, Debug)]
pub struct TransferOptions {
    /// Motion for the preview track.
    pub motion: MotionSpec,
    pub fps: f64,
    pub duration: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            motion: MotionSpec::Walk,
            fps: 10.0,
            duration: 2.0,
            width: 64,
            height: 64,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransferReport {
    pub source: u64,
    pub target: u64,
    /// Per-axis cloth rescale applied during the move.
    pub scale: [f64; 3],
    pub vertices: usize,
    pub cloth_vertices: usize,
    /// How many target vertices carried over (all non-cloth ones).
    pub target_vertices_kept: usize,
    pub frames: usize,
    /// Transferred-avatar silhouette vs. target-body-only silhouette.
    pub mean_silhouette_iou: f64,
    pub min_silhouette_iou: f64,
}

/// A transferred avatar with renderable attributes stitched from both
/// subjects according to vertex provenance.
pub struct TransferredAvatar {
    pub asset: SubjectAsset<Scalar>,
    pub provenance: Vec<(bool, usize)>,
    pub scale: [Scalar; 3],
}

/// Regenerate a subject from its dataset directory, with the labels the
/// directory prefers (predicted if present, reference otherwise).
pub fn load_asset(dir: &Path) -> Result<(SubjectAsset<Scalar>, Vec<PartLabel>)> {
    let manifest = load_manifest(dir)?;
    let asset = generate_subject::<Scalar>(manifest.seed, &manifest.studio)?;
    let (labels, _) = load_subject_labels(dir, asset.mesh.num_vertices())?;
    Ok((asset, labels))
}

/// Move the source's cloth onto the target and stitch per-vertex attributes
/// by provenance.
pub fn build_transfer(
    source: &SubjectAsset<Scalar>,
    source_labels: &[PartLabel],
    target: &SubjectAsset<Scalar>,
    target_labels: &[PartLabel],
) -> Result<TransferredAvatar> {
    let outcome = transfer_clothing(&source.mesh, source_labels, &target.mesh, target_labels)?;
    let n = outcome.mesh.num_vertices();
    let mut colors = Vec::with_capacity(n * 3);
    let mut scales = Vec::with_capacity(n);
    for &(from_source, orig) in &outcome.provenance {
        let (c, s) = if from_source {
            (&source.gt_colors, &source.gt_scales)
        } else {
            (&target.gt_colors, &target.gt_scales)
        };
        for a in 0..3 {
            colors.push(c.at2(orig, a));
        }
        scales.push(s.at2(orig, 0));
    }
    let asset = SubjectAsset {
        mesh: outcome.mesh,
        body: target.body.clone(),
        gt_labels: outcome.labels,
        gt_colors: Tensor::from_vec([n, 3], colors),
        gt_scales: Tensor::from_vec([n, 1], scales),
        garment: source.garment,
        seed: target.seed,
    };
    Ok(TransferredAvatar { asset, provenance: outcome.provenance, scale: outcome.scale })
}

fn render_silhouette(
    asset: &SubjectAsset<Scalar>,
    subset: Option<&[usize]>,
    pose: &Pose<Scalar>,
    camera: &draper_core::body::Camera<Scalar>,
    raster: &RasterConfig<Scalar>,
) -> (Tensor<Scalar>, Tensor<Scalar>) {
    let zeros = Tensor::zeros(asset.mesh.vertices.shape().to_vec());
    let posed = lbs_deform_plain(&asset.mesh.vertices, &zeros, pose, &asset.mesh);
    let normals = vertex_normals_plain(&posed, &asset.mesh.faces);
    let (p, s, c, nr) = match subset {
        None => (posed, asset.gt_scales.clone(), asset.gt_colors.clone(), normals),
        Some(idx) => (
            gather(&posed, idx),
            gather(&asset.gt_scales, idx),
            gather(&asset.gt_colors, idx),
            gather(&normals, idx),
        ),
    };
    let r = render_gaussians_plain(&p, &s, &c, &nr, camera, raster);
    (r.rgb, r.silhouette)
}

fn gather(t: &Tensor<Scalar>, idx: &[usize]) -> Tensor<Scalar> {
    let cols = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        for c in 0..cols {
            data.push(t.at2(i, c));
        }
    }
    Tensor::from_vec([idx.len(), cols], data)
}

/// Transfer source cloth onto the target, save the result under `out_dir`,
/// and render the preview track with per-frame silhouette checks.
pub fn run_transfer(
    source_dir: &Path,
    target_dir: &Path,
    out_dir: &Path,
    opts: &TransferOptions,
) -> Result<TransferReport> {
    let (src, src_labels) = load_asset(source_dir)?;
    let (tgt, tgt_labels) = load_asset(target_dir)?;
    let transferred = build_transfer(&src, &src_labels, &tgt, &tgt_labels)?;
    let asset = &transferred.asset;

    fs::create_dir_all(out_dir.join("frames")).map_err(Error::Io)?;
    save_mesh(&asset.mesh, &out_dir.join("avatar"))?;
    draper_studio::LabelSets::from_labels(&asset.gt_labels).save(&out_dir.join("labels.json"))?;
    let prov: Vec<[u64; 2]> = transferred
        .provenance
        .iter()
        .map(|&(s, i)| [u64::from(s), i as u64])
        .collect();
    let prov_json = serde_json::to_string_pretty(&prov)
        .map_err(|e| Error::Contract(format!("provenance serialization failed: {e}")))?;
    fs::write(out_dir.join("provenance.json"), prov_json).map_err(Error::Io)?;

    // preview track: transferred avatar vs. the target body alone
    let poses: Vec<Pose<Scalar>> = pose_track(opts.motion, opts.fps, opts.duration)?;
    let camera = frame_camera(&tgt.mesh, opts.width, opts.height);
    let raster = RasterConfig::new(opts.width, opts.height);
    let body_idx: Vec<usize> = tgt_labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != PartLabel::Cloth)
        .map(|(i, _)| i)
        .collect();

    let mut ious = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        let (rgb, sil) = render_silhouette(asset, None, pose, &camera, &raster);
        let (_, body_sil) = render_silhouette(&tgt, Some(&body_idx), pose, &camera, &raster);
        ious.push(silhouette_iou(&sil, &body_sil));
        save_png_rgb(&rgb, &out_dir.join(format!("frames/{k:04}.png")))?;
        save_flt(&sil, &out_dir.join(format!("frames/{k:04}_sil.flt")))?;
    }
    let mean = ious.iter().sum::<Scalar>() / ious.len() as Scalar;
    let min = ious.iter().copied().fold(Scalar::INFINITY, Scalar::min);

    let report = TransferReport {
        source: src.seed,
        target: tgt.seed,
        scale: transferred.scale,
        vertices: asset.mesh.num_vertices(),
        cloth_vertices: asset
            .gt_labels
            .iter()
            .filter(|&&l| l == PartLabel::Cloth)
            .count(),
        target_vertices_kept: transferred.provenance.iter().filter(|&&(s, _)| !s).count(),
        frames: poses.len(),
        mean_silhouette_iou: mean,
        min_silhouette_iou: min,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Contract(format!("report serialization failed: {e}")))?;
    fs::write(out_dir.join("report.json"), json).map_err(Error::Io)?;
    Ok(report)
}

/// Path of the report written by [`run_transfer`].
pub fn report_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.json")
}
