//! Part segmentation and clothing transfer.
//!
//! Vertices carry one of four semantic labels: face, hands, cloth, body.
//! Labels are bootstrapped by projecting multi-view label maps onto the mesh
//! with a depth visibility test, smoothed by neighbor voting with small
//! connected components absorbed into their surroundings, and distilled into
//! a small feature-space classifier so new geometry can be labeled without
//! views. The cloth subset can then be lifted off one body and re-fitted to
//! another by per-axis torso alignment, with skinning weights re-bound to the
//! nearest vertices of the new wearer.

use serde::{Deserialize, Serialize};

use crate::body::{Camera, PartHint, SkinnedMesh};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Adam, Binding, Mlp, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Semantic vertex classes. Palette indices (for label maps) start at 1;
/// 0 is reserved for background pixels.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartLabel {
    Face,
    Hands,
    Cloth,
    Body,
}

impl PartLabel {
    pub const COUNT: usize = 4;
    pub const ALL: [PartLabel; 4] = [PartLabel::Face, PartLabel::Hands, PartLabel::Cloth, PartLabel::Body];

    pub fn index(self) -> usize {
        match self {
            PartLabel::Face => 0,
            PartLabel::Hands => 1,
            PartLabel::Cloth => 2,
            PartLabel::Body => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<PartLabel> {
        Self::ALL.get(i).copied()
    }

    /// Index into the label-map palette (background = 0).
    pub fn palette_index(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_palette_index(p: u8) -> Option<PartLabel> {
        if p == 0 { None } else { Self::from_index(p as usize - 1) }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Face => "face",
            PartLabel::Hands => "hands",
            PartLabel::Cloth => "cloth",
            PartLabel::Body => "body",
        }
    }
}

/// Default label for a builder part hint (garments are attached separately
/// and labeled cloth by their constructor).
pub fn label_from_hint(hint: PartHint) -> PartLabel {
    match hint {
        PartHint::Head => PartLabel::Face,
        PartHint::HandL | PartHint::HandR => PartLabel::Hands,
        PartHint::Torso | PartHint::Limb => PartLabel::Body,
    }
}

// ---------------------------------------------------------------------------
// multi-view label projection
// ---------------------------------------------------------------------------

/// One calibrated view with a rendered label map and depth map.
pub struct LabeledView<'a, T: Real> {
    pub camera: &'a Camera<T>,
    /// [H*W] palette indices, row-major; 0 = background.
    pub labels: &'a [u8],
    /// [H,W,1] camera-space depth, 0 where nothing was rendered.
    pub depth: &'a Tensor<T>,
}

/// Projected pseudo-labels with per-vertex supporting vote counts.
pub struct ProjectedLabels {
    pub labels: Vec<PartLabel>,
    pub votes: Vec<usize>,
}

/// Span of positive depths across a set of views; used to scale the
/// visibility threshold.
pub fn scene_depth_range<T: Real>(views: &[LabeledView<T>]) -> T {
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for v in views {
        for &d in v.depth.data() {
            if d > T::zero() {
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    if hi > lo { hi - lo } else { T::one() }
}

/// Project vertices into every view and vote on their labels. A vertex only
/// collects a vote where its camera depth agrees with the view's depth map
/// within 2% of the scene depth range (it is not occluded there). Vertices
/// with no votes fall back to body and are counted in the log.
pub fn project_labels<T: Real>(vertices: &Tensor<T>, views: &[LabeledView<T>]) -> ProjectedLabels {
    assert_eq!(vertices.rank(), 2);
    assert_eq!(vertices.shape()[1], 3);
    let n = vertices.shape()[0];
    let tau = scene_depth_range(views) * T::from_f64c(0.02);
    let mut labels = Vec::with_capacity(n);
    let mut votes = Vec::with_capacity(n);
    let mut orphans = 0usize;
    for i in 0..n {
        let p = [vertices.at2(i, 0), vertices.at2(i, 1), vertices.at2(i, 2)];
        let mut counts = [0usize; PartLabel::COUNT];
        for view in views {
            let (h, w) = (view.camera.height, view.camera.width);
            assert_eq!(view.labels.len(), h * w, "label map size mismatch");
            let ([u, v], z) = view.camera.project(p);
            if z <= T::zero() {
                continue;
            }
            let (uf, vf) = (u.to_f64c(), v.to_f64c());
            if uf < 0.0 || vf < 0.0 || uf >= w as f64 || vf >= h as f64 {
                continue;
            }
            let (px, py) = (uf as usize, vf as usize);
            let d = view.depth.data()[py * w + px];
            if d <= T::zero() || (z - d).abs() > tau {
                continue;
            }
            if let Some(l) = PartLabel::from_palette_index(view.labels[py * w + px]) {
                counts[l.index()] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            orphans += 1;
            labels.push(PartLabel::Body);
            votes.push(0);
        } else {
            let best = (0..PartLabel::COUNT).max_by_key(|&k| counts[k]).unwrap();
            labels.push(PartLabel::from_index(best).unwrap());
            votes.push(total);
        }
    }
    if orphans > 0 {
        log::warn!("{orphans} of {n} vertices were invisible in every view; defaulted to body");
    }
    ProjectedLabels { labels, votes }
}

// ---------------------------------------------------------------------------
// refinement
// ---------------------------------------------------------------------------

/// Smallest connected component that survives refinement.
pub fn min_component_size(num_vertices: usize) -> usize {
    5.max(num_vertices / 1000)
}

/// Per-vertex neighbor lists from mesh faces.
pub fn vertex_neighbors<T: Real>(mesh: &SkinnedMesh<T>) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); mesh.num_vertices()];
    for (a, b) in mesh.edges() {
        nb[a].push(b);
        nb[b].push(a);
    }
    nb
}

/// Majority-vote smoothing: every vertex simultaneously takes its neighbors'
/// most common label (ties keep the current label), iterated to a fixed
/// point; then connected components smaller than `min_component_size` are
/// absorbed into their most common surrounding label. The outer loop repeats
/// until stable.
pub fn refine_labels(neighbors: &[Vec<usize>], labels: &[PartLabel]) -> Vec<PartLabel> {
    let n = labels.len();
    assert_eq!(neighbors.len(), n);
    let min_size = min_component_size(n);
    let mut current = labels.to_vec();
    for _round in 0..20 {
        let mut changed = false;
        // simultaneous neighbor voting to a fixed point
        for _pass in 0..50 {
            let mut next = current.clone();
            let mut any = false;
            for i in 0..n {
                let mut counts = [0usize; PartLabel::COUNT];
                for &j in &neighbors[i] {
                    counts[current[j].index()] += 1;
                }
                let here = current[i].index();
                let mut best = here;
                for k in 0..PartLabel::COUNT {
                    if counts[k] > counts[best] {
                        best = k;
                    }
                }
                // a tie with the current label keeps it
                if counts[best] > counts[here] && best != here {
                    next[i] = PartLabel::from_index(best).unwrap();
                    any = true;
                }
            }
            current = next;
            if !any {
                break;
            }
            changed = true;
        }
        // absorb undersized connected components
        let mut comp = vec![usize::MAX; n];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            comp[start] = id;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &u in &neighbors[v] {
                    if comp[u] == usize::MAX && current[u] == current[start] {
                        comp[u] = id;
                        stack.push(u);
                    }
                }
            }
            comps.push(members);
        }
        for members in &comps {
            if members.len() >= min_size {
                continue;
            }
            let mut counts = [0usize; PartLabel::COUNT];
            for &v in members {
                for &u in &neighbors[v] {
                    if comp[u] != comp[v] {
                        counts[current[u].index()] += 1;
                    }
                }
            }
            if let Some(best) = (0..PartLabel::COUNT)
                .filter(|&k| counts[k] > 0)
                .max_by_key(|&k| (counts[k], usize::MAX - k))
            {
                let new = PartLabel::from_index(best).unwrap();
                for &v in members {
                    if current[v] != new {
                        current[v] = new;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    current
}

// ---------------------------------------------------------------------------
// feature-space classifier
// ---------------------------------------------------------------------------

/// Small MLP mapping per-vertex feature rows to part-label logits.
pub struct LabelClassifier {
    mlp: Mlp,
    pub in_dim: usize,
}

impl LabelClassifier {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let mlp = Mlp::new(
            store,
            prefix,
            &[in_dim, hidden, PartLabel::COUNT],
            Activation::Relu,
            false,
            rng,
        );
        Self { mlp, in_dim }
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<T>, bind: &Binding, feats: NodeId) -> NodeId {
        self.mlp.forward(g, bind, feats)
    }

    /// Argmax class per feature row.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, feats: &Tensor<T>) -> Vec<PartLabel> {
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let x = g.constant(feats.clone());
        let logits = self.logits(&mut g, &bind, x);
        let v = g.value(logits);
        let n = feats.shape()[0];
        (0..n)
            .map(|i| {
                let mut best = 0;
                for k in 1..PartLabel::COUNT {
                    if v.at2(i, k) > v.at2(i, best) {
                        best = k;
                    }
                }
                PartLabel::from_index(best).unwrap()
            })
            .collect()
    }
}

/// Cross-entropy training on a fixed labeled set. Logs a warning when a
/// class is absent from the labels (the classifier can then never learn it).
pub fn train_label_classifier<T: Real>(
    store: &mut ParamStore<T>,
    clf: &LabelClassifier,
    feats: &Tensor<T>,
    labels: &[PartLabel],
    steps: usize,
    lr: T,
) -> Result<()> {
    let n = feats.shape()[0];
    if n != labels.len() {
        return Err(Error::Config(format!(
            "classifier features ({n}) and labels ({}) disagree",
            labels.len()
        )));
    }
    let mut present = [false; PartLabel::COUNT];
    for l in labels {
        present[l.index()] = true;
    }
    for l in PartLabel::ALL {
        if !present[l.index()] {
            log::warn!("class '{}' is absent from the classifier's training labels", l.name());
        }
    }
    let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let mut adam = Adam::new(lr);
    for _ in 0..steps {
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let x = g.constant(feats.clone());
        let logits = clf.logits(&mut g, &bind, x);
        let logp = g.log_softmax_rows(logits);
        let picked = g.take_per_row(logp, &idx);
        let mean = g.mean(picked);
        let loss = g.mul_scalar(mean, -T::one());
        let grads = g.backward(loss);
        adam.step(store, &bind, &grads);
    }
    Ok(())
}

/// Fraction of positions where the two labelings agree.
pub fn label_agreement(a: &[PartLabel], b: &[PartLabel]) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    let hits = a.iter().zip(b).filter(|(x, y)| x == y).count();
    hits as f64 / a.len() as f64
}

/// Recall of one class: of the positions truly labeled `class`, the fraction
/// predicted as it.
pub fn label_recall(pred: &[PartLabel], truth: &[PartLabel], class: PartLabel) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let mut hit = 0usize;
    let mut total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if *t == class {
            total += 1;
            if *p == class {
                hit += 1;
            }
        }
    }
    if total == 0 { 1.0 } else { hit as f64 / total as f64 }
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

/// Disjoint vertex index sets covering the whole mesh.
pub struct Partition {
    pub face: Vec<usize>,
    pub hands: Vec<usize>,
    pub cloth: Vec<usize>,
    pub body: Vec<usize>,
}

impl Partition {
    pub fn set(&self, label: PartLabel) -> &[usize] {
        match label {
            PartLabel::Face => &self.face,
            PartLabel::Hands => &self.hands,
            PartLabel::Cloth => &self.cloth,
            PartLabel::Body => &self.body,
        }
    }
}

/// Split vertices by label. When `hints` are given, face and hand membership
/// is taken from the builder hints instead (they are exact for generated
/// bodies), with the cloth label always winning over a hint.
pub fn partition(labels: &[PartLabel], hints: Option<&[PartHint]>) -> Partition {
    let mut out = Partition { face: Vec::new(), hands: Vec::new(), cloth: Vec::new(), body: Vec::new() };
    for (i, &l) in labels.iter().enumerate() {
        let mut label = l;
        if let Some(hints) = hints {
            if l != PartLabel::Cloth {
                label = label_from_hint(hints[i]);
            }
        }
        match label {
            PartLabel::Face => out.face.push(i),
            PartLabel::Hands => out.hands.push(i),
            PartLabel::Cloth => out.cloth.push(i),
            PartLabel::Body => out.body.push(i),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// clothing transfer
// ---------------------------------------------------------------------------

/// Result of re-fitting a garment onto a new body: the combined mesh, its
/// labels, the per-axis scale that was applied, and for every new vertex the
/// index it came from (target body for kept vertices, source mesh for cloth)
/// so per-vertex attributes can follow.
pub struct TransferOutcome<T: Real> {
    pub mesh: SkinnedMesh<T>,
    pub labels: Vec<PartLabel>,
    pub scale: [T; 3],
    /// For each output vertex: `(from_source, original_index)`.
    pub provenance: Vec<(bool, usize)>,
}

fn torso_box<T: Real>(mesh: &SkinnedMesh<T>, labels: &[PartLabel]) -> Result<([T; 3], [T; 3])> {
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    let mut seen = false;
    for i in 0..mesh.num_vertices() {
        // garments hugging the torso must not inflate the alignment box
        if mesh.part_hint[i] == PartHint::Torso && labels[i] != PartLabel::Cloth {
            seen = true;
            for a in 0..3 {
                let v = mesh.vertices.at2(i, a);
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
    }
    if !seen {
        return Err(Error::Config("mesh has no torso vertices to align on".into()));
    }
    Ok((lo, hi))
}

/// Skin-weight rows copied from each point's nearest mesh vertex, optionally
/// restricted to a candidate subset.
pub fn nearest_vertex_weights<T: Real>(
    mesh: &SkinnedMesh<T>,
    points: &Tensor<T>,
    candidates: Option<&[usize]>,
) -> Tensor<T> {
    let n = mesh.num_vertices();
    let all: Vec<usize>;
    let cand: &[usize] = match candidates {
        Some(c) => c,
        None => {
            all = (0..n).collect();
            &all
        }
    };
    assert!(!cand.is_empty(), "need at least one candidate vertex");
    let j = mesh.num_joints();
    let m = points.shape()[0];
    let mut out = Tensor::zeros([m, j]);
    for p in 0..m {
        let q = [points.at2(p, 0), points.at2(p, 1), points.at2(p, 2)];
        let mut best = cand[0];
        let mut best_d = T::infinity();
        for &i in cand {
            let v = mesh.vertex(i);
            let d = (q[0] - v[0]) * (q[0] - v[0])
                + (q[1] - v[1]) * (q[1] - v[1])
                + (q[2] - v[2]) * (q[2] - v[2]);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        for jj in 0..j {
            *out.at2_mut(p, jj) = mesh.skin_weights.at2(best, jj);
        }
    }
    out
}

/// Move the cloth vertices of `source` onto `target`: the garment is scaled
/// per axis by the ratio of torso bounding boxes, re-centered on the target
/// torso, and its skinning re-bound to the nearest target body vertices. The
/// target's own non-cloth vertices pass through untouched (bit for bit); any
/// cloth the target wore is dropped.
pub fn transfer_clothing<T: Real>(
    source: &SkinnedMesh<T>,
    source_labels: &[PartLabel],
    target: &SkinnedMesh<T>,
    target_labels: &[PartLabel],
) -> Result<TransferOutcome<T>> {
    assert_eq!(source_labels.len(), source.num_vertices());
    assert_eq!(target_labels.len(), target.num_vertices());
    if source.num_joints() != target.num_joints() {
        return Err(Error::Config(format!(
            "source ({}) and target ({}) skeletons disagree",
            source.num_joints(),
            target.num_joints()
        )));
    }
    let cloth: Vec<usize> = (0..source.num_vertices())
        .filter(|&i| source_labels[i] == PartLabel::Cloth)
        .collect();
    if cloth.is_empty() {
        return Err(Error::Config("source mesh carries no cloth vertices".into()));
    }
    let (s_lo, s_hi) = torso_box(source, source_labels)?;
    let (t_lo, t_hi) = torso_box(target, target_labels)?;
    let half = T::from_f64c(0.5);
    let mut scale = [T::one(); 3];
    let mut c_src = [T::zero(); 3];
    let mut c_tgt = [T::zero(); 3];
    for a in 0..3 {
        let es = s_hi[a] - s_lo[a];
        let et = t_hi[a] - t_lo[a];
        if es.to_f64c() <= 1e-9 {
            return Err(Error::Config("source torso is degenerate along an axis".into()));
        }
        scale[a] = et / es;
        c_src[a] = (s_lo[a] + s_hi[a]) * half;
        c_tgt[a] = (t_lo[a] + t_hi[a]) * half;
    }

    // kept target vertices, in order, with a dense remap for faces
    let keep: Vec<usize> = (0..target.num_vertices())
        .filter(|&i| target_labels[i] != PartLabel::Cloth)
        .collect();
    let mut remap = vec![usize::MAX; target.num_vertices()];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }

    let j = target.num_joints();
    let total = keep.len() + cloth.len();
    let mut vertices = Tensor::zeros([total, 3]);
    let mut weights = Tensor::zeros([total, j]);
    let mut hints = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(total);
    for (new, &old) in keep.iter().enumerate() {
        for a in 0..3 {
            *vertices.at2_mut(new, a) = target.vertices.at2(old, a);
        }
        for jj in 0..j {
            *weights.at2_mut(new, jj) = target.skin_weights.at2(old, jj);
        }
        hints.push(target.part_hint[old]);
        labels.push(target_labels[old]);
        provenance.push((false, old));
    }

    // fitted cloth positions
    let mut fitted = Tensor::zeros([cloth.len(), 3]);
    for (k, &i) in cloth.iter().enumerate() {
        for a in 0..3 {
            let v = source.vertices.at2(i, a);
            *fitted.at2_mut(k, a) = c_tgt[a] + scale[a] * (v - c_src[a]);
        }
    }
    let target_body: Vec<usize> =
        keep.iter().copied().filter(|&i| target_labels[i] == PartLabel::Body).map(|i| remap[i]).collect();
    let keep_for_binding: Vec<usize> = if target_body.is_empty() {
        (0..keep.len()).collect()
    } else {
        target_body
    };
    // bind against the already-kept part of the new mesh
    let interim = SkinnedMesh {
        vertices: vertices.clone(),
        faces: Vec::new(),
        joints: target.joints.clone(),
        skin_weights: weights.clone(),
        part_hint: hints.clone(),
    };
    let cloth_weights = nearest_vertex_weights(&interim, &fitted, Some(&keep_for_binding));
    for k in 0..cloth.len() {
        let new = keep.len() + k;
        for a in 0..3 {
            *vertices.at2_mut(new, a) = fitted.at2(k, a);
        }
        for jj in 0..j {
            *weights.at2_mut(new, jj) = cloth_weights.at2(k, jj);
        }
        hints.push(source.part_hint[cloth[k]]);
        labels.push(PartLabel::Cloth);
        provenance.push((true, cloth[k]));
    }

    // faces: kept target faces (all corners kept) + reindexed source cloth faces
    let mut source_remap = vec![usize::MAX; source.num_vertices()];
    for (k, &i) in cloth.iter().enumerate() {
        source_remap[i] = keep.len() + k;
    }
    let mut faces = Vec::new();
    for f in &target.faces {
        if f.iter().all(|&v| remap[v] != usize::MAX) {
            faces.push([remap[f[0]], remap[f[1]], remap[f[2]]]);
        }
    }
    for f in &source.faces {
        if f.iter().all(|&v| source_remap[v] != usize::MAX) {
            faces.push([source_remap[f[0]], source_remap[f[1]], source_remap[f[2]]]);
        }
    }

    let mesh = SkinnedMesh {
        vertices,
        faces,
        joints: target.joints.clone(),
        skin_weights: weights,
        part_hint: hints,
    };
    mesh.validate()?;
    Ok(TransferOutcome { mesh, labels, scale, provenance })
}
