//! Part segmentation from calibrated views: lifts 2D segmentation maps onto
//! the canonical template by visibility-checked projection voting, smooths
//! with connectivity refinement, then distills into the per-vertex label
//! classifier (position ⊕ decoded plane features) so labels generalize
//! beyond directly observed vertices. Writes `labels.json`, which trainers
//! prefer over the dataset reference labels.

use std::fs;
use std::path::Path;

use draper_core::error::{Error, Result};
use draper_core::parts::{
    label_agreement, label_recall, project_labels, refine_labels, train_label_classifier,
    vertex_neighbors, LabeledView, PartLabel,
};
use draper_core::tensor::Tensor;
use draper_studio::{DatasetPaths, LabelSets};
use serde::{Deserialize, Serialize};

use crate::data::{SubjectData, PREDICTED_LABELS};
use crate::model::AvatarModel;
use crate::Scalar;

pub const REPORT_FILE: &str = "segment_report.json";

#[derive(Clone, Debug)]
pub struct SegmentOptions {
    /// Classifier distillation steps.
    pub steps: usize,
    pub learning_rate: Scalar,
    /// Every n-th vertex is held out of classifier training to measure
    /// generalization.
    pub holdout_every: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions { steps: 300, learning_rate: 1e-2, holdout_every: 5 }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentReport {
    pub subject: u64,
    pub num_vertices: usize,
    pub views: usize,
    /// Lifted-and-refined labels vs. the dataset reference (when present).
    pub projected_agreement: Option<f64>,
    /// Classifier accuracy on vertices held out of its training set,
    /// measured against the lifted labels it distills.
    pub classifier_holdout_accuracy: f64,
    /// Final written labels vs. the dataset reference (when present).
    pub final_agreement: Option<f64>,
    pub cloth_recall: Option<f64>,
    pub labels_file: String,
}

fn gather_rows_plain(t: &Tensor<Scalar>, idx: &[usize]) -> Tensor<Scalar> {
    let cols = t.shape()[1];
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        for c in 0..cols {
            data.push(t.at2(i, c));
        }
    }
    Tensor::from_vec([idx.len(), cols], data)
}

/// Reference labels for scoring, straight from the dataset file (never the
/// predicted file this command overwrites).
fn reference_labels(sub: &SubjectData) -> Option<Vec<PartLabel>> {
    let path = DatasetPaths::new(sub.paths.root()).labels();
    let sets = LabelSets::load(&path).ok()?;
    sets.to_labels(sub.geom.mesh.num_vertices()).ok()
}

/// Run the lifting pipeline and write `labels.json` plus a report into the
/// subject directory. The model provides plane features (and is locally
/// fine-tuned on the classifier head only).
pub fn run_segment(
    model: &mut AvatarModel,
    sub: &SubjectData,
    opts: &SegmentOptions,
) -> Result<SegmentReport> {
    if opts.holdout_every < 2 {
        return Err(Error::Config("vertex holdout interval must be at least 2".into()));
    }
    let n = sub.geom.mesh.num_vertices();
    let views = sub.views()?;
    if views.is_empty() {
        return Err(Error::Config("subject has no calibrated views to lift labels from".into()));
    }
    let labeled: Vec<LabeledView<Scalar>> = views
        .iter()
        .map(|v| LabeledView { camera: &v.camera, labels: &v.seg, depth: &v.depth })
        .collect();

    // lift + smooth
    let projected = project_labels(&sub.geom.mesh.vertices, &labeled);
    let neighbors = vertex_neighbors(&sub.geom.mesh);
    let lifted = refine_labels(&neighbors, &projected.labels);

    // distill into the classifier on a vertex split
    let feats = model.vertex_features(sub.seed, &sub.geom.mesh.vertices)?;
    let train_idx: Vec<usize> = (0..n).filter(|i| i % opts.holdout_every != 0).collect();
    let held_idx: Vec<usize> = (0..n).filter(|i| i % opts.holdout_every == 0).collect();
    let train_feats = gather_rows_plain(&feats, &train_idx);
    let train_labels: Vec<PartLabel> = train_idx.iter().map(|&i| lifted[i]).collect();
    train_label_classifier(
        &mut model.store,
        &model.classifier,
        &train_feats,
        &train_labels,
        opts.steps,
        opts.learning_rate,
    )?;
    let pred = model.classifier.predict(&model.store, &feats);
    let holdout_hits = held_idx.iter().filter(|&&i| pred[i] == lifted[i]).count();
    let classifier_holdout_accuracy = holdout_hits as f64 / held_idx.len().max(1) as f64;

    // smooth the classifier output and write it
    let fin = refine_labels(&neighbors, &pred);
    let labels_path = sub.paths.root().join(PREDICTED_LABELS);
    LabelSets::from_labels(&fin).save(&labels_path)?;

    let reference = reference_labels(sub);
    let report = SegmentReport {
        subject: sub.seed,
        num_vertices: n,
        views: views.len(),
        projected_agreement: reference.as_ref().map(|r| label_agreement(&lifted, r)),
        classifier_holdout_accuracy,
        final_agreement: reference.as_ref().map(|r| label_agreement(&fin, r)),
        cloth_recall: reference.as_ref().map(|r| label_recall(&fin, r, PartLabel::Cloth)),
        labels_file: PREDICTED_LABELS.to_string(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Contract(format!("report serialization failed: {e}")))?;
    fs::write(sub.paths.root().join(REPORT_FILE), json).map_err(Error::Io)?;
    Ok(report)
}

/// Load a segment report written by [`run_segment`].
pub fn load_report(subject_dir: &Path) -> Result<SegmentReport> {
    let raw = fs::read_to_string(subject_dir.join(REPORT_FILE)).map_err(Error::Io)?;
    serde_json::from_str(&raw).map_err(|e| Error::Contract(format!("bad segment report: {e}")))
}
