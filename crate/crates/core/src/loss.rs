//! Training objectives.
//!
//! Rendered predictions are compared against target maps through a weighted
//! sum of photometric terms (L1, structural similarity, a multi-scale
//! gradient-magnitude proxy for perceptual distance), masked cloth and
//! face/hand photometric terms, geometric terms on normals, depth, and
//! silhouette, a temporal smoothness penalty over dynamic offsets, and a
//! magnitude regularizer. Every term is built on the tape so gradients flow;
//! masks enter as constants and never carry gradient. `combine_terms`
//! assembles the weighted total and fails loudly if any term goes non-finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::gaussian_taps;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Weights for the composite objective. Fields omitted from a serialized
/// form keep their defaults, so configs may override single weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct LossWeights<T: Real> {
    pub rgb: T,
    pub ssim: T,
    pub perceptual: T,
    pub cloth: T,
    pub geo_normal: T,
    pub geo_depth: T,
    pub geo_silhouette: T,
    pub temporal: T,
    pub regularizer: T,
    pub face_hands: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            rgb: T::from_f64c(0.8),
            ssim: T::from_f64c(0.2),
            perceptual: T::from_f64c(0.1),
            cloth: T::from_f64c(0.5),
            geo_normal: T::from_f64c(5.0),
            geo_depth: T::from_f64c(1.0),
            geo_silhouette: T::from_f64c(2.0),
            temporal: T::from_f64c(0.1),
            regularizer: T::from_f64c(0.01),
            face_hands: T::from_f64c(1.0),
        }
    }
}

// ---------------------------------------------------------------------------
// photometric terms
// ---------------------------------------------------------------------------

/// One minus mean structural similarity, on the tape. Window and constants
/// match [`crate::metrics::ssim`]: Gaussian window (width shrinks to fit,
/// σ = 1.5), K1 = 0.01, K2 = 0.03, unit dynamic range, valid region only.
pub fn ssim_loss<T: Real>(g: &mut Graph<T>, pred: NodeId, target: NodeId) -> NodeId {
    let shape = g.shape(pred).to_vec();
    assert_eq!(shape.len(), 3, "ssim loss expects [H,W,C]");
    let k = {
        let k = 11.min(shape[0]).min(shape[1]);
        if k % 2 == 0 { k - 1 } else { k }
    };
    let taps = gaussian_taps::<T>(k, 1.5);
    let mut taps2d = Vec::with_capacity(k * k);
    for &ty in &taps {
        for &tx in &taps {
            taps2d.push(ty * tx);
        }
    }
    let c1 = T::from_f64c(0.01 * 0.01);
    let c2 = T::from_f64c(0.03 * 0.03);
    let two = T::from_f64c(2.0);

    let wm = |g: &mut Graph<T>, x: NodeId| g.depthwise_valid(x, &taps2d, k, k);
    let mu_x = wm(g, pred);
    let mu_y = wm(g, target);
    let xx = {
        let sq = g.mul(pred, pred);
        wm(g, sq)
    };
    let yy = {
        let sq = g.mul(target, target);
        wm(g, sq)
    };
    let xy = {
        let prod = g.mul(pred, target);
        wm(g, prod)
    };
    let mxx = g.mul(mu_x, mu_x);
    let myy = g.mul(mu_y, mu_y);
    let mxy = g.mul(mu_x, mu_y);
    let vx = g.sub(xx, mxx);
    let vy = g.sub(yy, myy);
    let cov = g.sub(xy, mxy);
    let num = {
        let a = g.mul_scalar(mxy, two);
        let a = g.add_scalar(a, c1);
        let b = g.mul_scalar(cov, two);
        let b = g.add_scalar(b, c2);
        g.mul(a, b)
    };
    let den = {
        let a = g.add(mxx, myy);
        let a = g.add_scalar(a, c1);
        let b = g.add(vx, vy);
        let b = g.add_scalar(b, c2);
        g.mul(a, b)
    };
    let map = g.div(num, den);
    let mean = g.mean(map);
    g.affine(mean, -T::one(), T::one())
}

/// Per-level image gradient magnitude: 2×2 horizontal/vertical difference
/// kernels over each channel, combined as sqrt(dx² + dy² + ε).
fn gradient_magnitude<T: Real>(g: &mut Graph<T>, x: NodeId) -> NodeId {
    let half = T::from_f64c(0.5);
    let dx_kernel = [half, -half, half, -half];
    let dy_kernel = [half, half, -half, -half];
    let dx = g.depthwise_valid(x, &dx_kernel, 2, 2);
    let dy = g.depthwise_valid(x, &dy_kernel, 2, 2);
    let dx2 = g.mul(dx, dx);
    let dy2 = g.mul(dy, dy);
    let s = g.add(dx2, dy2);
    let s = g.add_scalar(s, T::from_f64c(1e-12));
    g.sqrt(s)
}

/// Perceptual proxy: mean L1 distance between gradient-magnitude maps on a
/// three-level pyramid (each level is a 2×2 average pool of the previous).
pub fn perceptual_loss<T: Real>(g: &mut Graph<T>, pred: NodeId, target: NodeId) -> NodeId {
    let mut p = pred;
    let mut t = target;
    let mut total: Option<NodeId> = None;
    for level in 0..3 {
        if level > 0 {
            p = g.avgpool2x2(p);
            t = g.avgpool2x2(t);
        }
        let gp = gradient_magnitude(g, p);
        let gt = gradient_magnitude(g, t);
        let term = g.l1(gp, gt);
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    g.mul_scalar(total.unwrap(), T::from_f64c(1.0 / 3.0))
}

// ---------------------------------------------------------------------------
// masked terms
// ---------------------------------------------------------------------------

/// Pixels where a mask plane exceeds ½.
pub fn mask_count<T: Real>(mask: &Tensor<T>) -> usize {
    let half = T::from_f64c(0.5);
    mask.data().iter().filter(|&&v| v > half).count()
}

/// Mean absolute difference over masked pixels; the mask is a per-pixel
/// constant (shape [H,W]) and carries no gradient. An empty mask contributes
/// zero and logs a warning.
pub fn masked_l1<T: Real>(
    g: &mut Graph<T>,
    pred: NodeId,
    target: NodeId,
    mask: &Tensor<T>,
) -> NodeId {
    let shape = g.shape(pred).to_vec();
    assert_eq!(shape.len(), 3, "masked l1 expects [H,W,C]");
    assert_eq!(mask.shape(), &shape[..2], "mask must be one plane of [H,W]");
    let count = mask_count(mask);
    if count == 0 {
        log::warn!("masked photometric term has an empty mask; contributing zero");
        return g.constant(Tensor::zeros([1]));
    }
    let diff = g.sub(pred, target);
    let diff = g.abs(diff);
    let m = g.constant(mask.reshape([shape[0], shape[1], 1]));
    let masked = g.mul_bcast_last(diff, m);
    let s = g.sum(masked);
    g.mul_scalar(s, T::from_f64c(1.0 / (count * shape[2]) as f64))
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

/// Geometric supervision terms, individually and pre-combined.
pub struct GeometryTerms {
    /// Mean (1 − cosine) between decoded predicted normals and targets over
    /// the mask.
    pub normal: NodeId,
    /// Masked mean absolute depth difference.
    pub depth: NodeId,
    /// Mean squared silhouette difference over the full frame.
    pub silhouette: NodeId,
    /// geo_normal·normal + geo_depth·depth + geo_silhouette·silhouette
    pub combined: NodeId,
}

/// Compares rendered geometry against target maps. Normals arrive encoded as
/// (n+1)/2 in both maps; they are decoded and the prediction re-normalized
/// before the cosine term. The mask is constant.
pub fn geometry_loss<T: Real>(
    g: &mut Graph<T>,
    pred_normal_enc: NodeId,
    pred_depth: NodeId,
    pred_silhouette: NodeId,
    target_normal_enc: &Tensor<T>,
    target_depth: &Tensor<T>,
    target_silhouette: &Tensor<T>,
    mask: &Tensor<T>,
    weights: &LossWeights<T>,
) -> GeometryTerms {
    let shape = g.shape(pred_normal_enc).to_vec();
    let (h, w) = (shape[0], shape[1]);
    assert_eq!(shape[2], 3, "normal maps carry three channels");
    let count = mask_count(mask);

    let normal = if count == 0 {
        log::warn!("geometry loss has an empty mask; normal and depth terms are zero");
        g.constant(Tensor::zeros([1]))
    } else {
        let two = T::from_f64c(2.0);
        let dec = g.affine(pred_normal_enc, two, -T::one());
        let rows = g.reshape_node(dec, [h * w, 3]);
        let unit = g.normalize_rows(rows, T::from_f64c(1e-12));
        let mut tgt = Vec::with_capacity(h * w * 3);
        for v in target_normal_enc.data() {
            tgt.push(two * *v - T::one());
        }
        let tgt = g.constant(Tensor::from_vec([h * w, 3], tgt));
        let cos = g.dot_rows(unit, tgt);
        let err = g.affine(cos, -T::one(), T::one());
        let err = g.reshape_node(err, [h, w, 1]);
        let m = g.constant(mask.reshape([h, w, 1]));
        let masked = g.mul_bcast_last(err, m);
        let s = g.sum(masked);
        g.mul_scalar(s, T::from_f64c(1.0 / count as f64))
    };

    let depth = if count == 0 {
        g.constant(Tensor::zeros([1]))
    } else {
        let tgt = g.constant(target_depth.clone());
        masked_l1_internal(g, pred_depth, tgt, mask, count)
    };

    let silhouette = {
        let tgt = g.constant(target_silhouette.clone());
        g.mse(pred_silhouette, tgt)
    };

    let combined = {
        let n = g.mul_scalar(normal, weights.geo_normal);
        let d = g.mul_scalar(depth, weights.geo_depth);
        let s = g.mul_scalar(silhouette, weights.geo_silhouette);
        let nd = g.add(n, d);
        g.add(nd, s)
    };
    GeometryTerms { normal, depth, silhouette, combined }
}

fn masked_l1_internal<T: Real>(
    g: &mut Graph<T>,
    pred: NodeId,
    target: NodeId,
    mask: &Tensor<T>,
    count: usize,
) -> NodeId {
    let shape = g.shape(pred).to_vec();
    let c = shape[2];
    let diff = g.sub(pred, target);
    let diff = g.abs(diff);
    let m = g.constant(mask.reshape([shape[0], shape[1], 1]));
    let masked = g.mul_bcast_last(diff, m);
    let s = g.sum(masked);
    g.mul_scalar(s, T::from_f64c(1.0 / (count * c) as f64))
}

// ---------------------------------------------------------------------------
// temporal and regularizer terms
// ---------------------------------------------------------------------------

/// Temporal smoothness over a window of per-point offset tensors [M,D]:
/// for each consecutive pair, the per-point squared displacement norm is
/// averaged over points, and the gap terms are summed. A single gap with a
/// constant per-point displacement v yields exactly ‖v‖².
pub fn temporal_loss<T: Real>(g: &mut Graph<T>, steps: &[NodeId]) -> NodeId {
    assert!(steps.len() >= 2, "temporal loss needs at least two window steps");
    let m = g.shape(steps[0])[0];
    let mut total: Option<NodeId> = None;
    for pair in steps.windows(2) {
        let d = g.sub(pair[1], pair[0]);
        let sq = g.mul(d, d);
        let s = g.sum(sq);
        let term = g.mul_scalar(s, T::from_f64c(1.0 / m as f64));
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    total.unwrap()
}

/// Mean-square magnitude penalty summed over a set of tensors.
pub fn magnitude_penalty<T: Real>(g: &mut Graph<T>, nodes: &[NodeId]) -> NodeId {
    assert!(!nodes.is_empty(), "magnitude penalty needs at least one tensor");
    let mut total: Option<NodeId> = None;
    for &n in nodes {
        let sq = g.mul(n, n);
        let term = g.mean(sq);
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    total.unwrap()
}

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

/// One named, weighted term of the composite objective.
#[derive(Clone, Debug)]
pub struct LossTerm<T> {
    pub name: &'static str,
    pub value: T,
    pub weight: T,
}

/// Evaluated breakdown of a composite loss.
#[derive(Clone, Debug)]
pub struct LossReport<T> {
    pub terms: Vec<LossTerm<T>>,
    pub total: T,
}

impl<T: Real> LossReport<T> {
    pub fn term(&self, name: &str) -> Option<&LossTerm<T>> {
        self.terms.iter().find(|t| t.name == name)
    }
}

/// Weighted sum of scalar terms on the tape. Every term (and the total) is
/// checked for finiteness; a NaN or infinity aborts with the offending term's
/// name so a diverging run fails loudly instead of training on garbage.
pub fn combine_terms<T: Real>(
    g: &mut Graph<T>,
    terms: &[(&'static str, NodeId, T)],
) -> Result<(NodeId, LossReport<T>)> {
    assert!(!terms.is_empty(), "composite loss needs at least one term");
    let mut total: Option<NodeId> = None;
    let mut report = Vec::with_capacity(terms.len());
    for &(name, node, weight) in terms {
        let value = scalar_value(g, node);
        if !value.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        report.push(LossTerm { name, value, weight });
        let weighted = g.mul_scalar(node, weight);
        total = Some(match total {
            None => weighted,
            Some(acc) => g.add(acc, weighted),
        });
    }
    let total = total.unwrap();
    let total_value = scalar_value(g, total);
    if !total_value.is_finite() {
        return Err(Error::NonFinite("total".into()));
    }
    Ok((total, LossReport { terms: report, total: total_value }))
}

fn scalar_value<T: Real>(g: &Graph<T>, node: NodeId) -> T {
    let v = g.value(node);
    assert_eq!(v.len(), 1, "loss terms must be scalars");
    v.data()[0]
}
