//! Differentiable rasterization of isotropic Gaussian splats.
//!
//! Every splat carries a 2D screen mean, an isotropic screen-space footprint
//! σ (pixels), a payload vector (color, encoded normal, camera depth), and a
//! camera depth used only for ordering and culling. Per pixel, splats
//! composite front-to-back:
//!
//!   out(p)  = Σ_i T_i·a_i·y_i,   a_i = min(a_max, exp(−‖p−μ_i‖²/(2σ_i²))),
//!   T_i     = Π_{j<i} (1 − a_j)
//!
//! with support truncated at `support`·σ. The accumulated alpha channel
//! doubles as the silhouette; color renders over a white background; normal
//! and depth channels are normalized by alpha where it is meaningful.
//!
//! The backward pass replays each pixel's contributor list and uses suffix
//! sums for the transmittance chain, so no per-pixel history is stored beyond
//! the contributor indices.

use crate::body::Camera;
use crate::graph::{DiffOp, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct RasterConfig<T> {
    pub width: usize,
    pub height: usize,
    /// Splats at camera depth ≤ near are culled; projection denominators are
    /// clamped here so culled splats keep finite values and zero gradients.
    pub near: T,
    /// Disc support cutoff in units of σ.
    pub support: T,
    /// Upper clamp on per-splat alpha; keeps transmittance strictly positive.
    pub alpha_max: T,
    /// Alpha threshold below which normalized channels (normal, depth) are
    /// defined as zero.
    pub alpha_floor: T,
}

impl<T: Real> RasterConfig<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            near: T::from_f64c(0.05),
            support: T::from_f64c(3.0),
            alpha_max: T::from_f64c(0.999),
            alpha_floor: T::from_f64c(1e-4),
        }
    }
}

/// Contributor lists per pixel, in front-to-back order.
fn build_pixel_lists<T: Real>(
    means2d: &[T],
    sigmas: &[T],
    depths: &[T],
    cfg: &RasterConfig<T>,
) -> Vec<Vec<u32>> {
    let n = sigmas.len();
    let mut order: Vec<u32> = (0..n as u32)
        .filter(|&i| {
            let iu = i as usize;
            depths[iu] > cfg.near && sigmas[iu] > T::from_f64c(1e-12)
        })
        .collect();
    // stable: equal depths keep input order
    order.sort_by(|&a, &b| depths[a as usize].partial_cmp(&depths[b as usize]).unwrap());

    let (w, h) = (cfg.width, cfg.height);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); w * h];
    let half = T::from_f64c(0.5);
    for &i in &order {
        let iu = i as usize;
        let (u, v) = (means2d[iu * 2], means2d[iu * 2 + 1]);
        let r = cfg.support * sigmas[iu];
        let r2 = r * r;
        let x0 = (u - half - r).to_f64c().ceil().max(0.0) as usize;
        let x1 = (u - half + r).to_f64c().floor().min((w - 1) as f64);
        let y0 = (v - half - r).to_f64c().ceil().max(0.0) as usize;
        let y1 = (v - half + r).to_f64c().floor().min((h - 1) as f64);
        if x1 < 0.0 || y1 < 0.0 || x0 as f64 > x1 || y0 as f64 > y1 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for y in y0..=y1 {
            let dy = T::from_usizec(y) + half - v;
            for x in x0..=x1 {
                let dx = T::from_usizec(x) + half - u;
                if dx * dx + dy * dy <= r2 {
                    lists[y * w + x].push(i);
                }
            }
        }
    }
    lists
}

fn splat_alpha<T: Real>(
    means2d: &[T],
    sigmas: &[T],
    i: usize,
    px: T,
    py: T,
    alpha_max: T,
) -> (T, bool) {
    let dx = px - means2d[i * 2];
    let dy = py - means2d[i * 2 + 1];
    let s = sigmas[i];
    let w = (-(dx * dx + dy * dy) / (T::from_f64c(2.0) * s * s)).exp();
    if w >= alpha_max {
        (alpha_max, true) // clamp active: a is locally constant
    } else {
        (w, false)
    }
}

/// Shared forward kernel. Returns the composited `[H,W,P+1]` image (payload
/// channels then accumulated alpha) and the per-pixel final transmittance.
fn composite_forward<T: Real>(
    means2d: &[T],
    sigmas: &[T],
    payloads: &[T],
    p_dim: usize,
    lists: &[Vec<u32>],
    cfg: &RasterConfig<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (w, h) = (cfg.width, cfg.height);
    let half = T::from_f64c(0.5);
    let mut out = vec![T::zero(); w * h * (p_dim + 1)];
    let mut trans = vec![T::one(); w * h];
    for y in 0..h {
        let py = T::from_usizec(y) + half;
        for x in 0..w {
            let px = T::from_usizec(x) + half;
            let pix = y * w + x;
            let row = &mut out[pix * (p_dim + 1)..(pix + 1) * (p_dim + 1)];
            let mut t = T::one();
            let mut acc_alpha = T::zero();
            for &i in &lists[pix] {
                let iu = i as usize;
                let (a, _) = splat_alpha(means2d, sigmas, iu, px, py, cfg.alpha_max);
                // `ta` is shared between the alpha accumulator and the
                // transmittance update so A + T telescopes exactly
                let ta = t * a;
                for c in 0..p_dim {
                    row[c] += ta * payloads[iu * p_dim + c];
                }
                acc_alpha += ta;
                t -= ta;
            }
            row[p_dim] = acc_alpha;
            trans[pix] = t;
        }
    }
    (Tensor::from_vec([h, w, p_dim + 1], out), Tensor::from_vec([h, w], trans))
}

struct RasterizeOp<T> {
    depths: Vec<T>,
    cfg: RasterConfig<T>,
    /// Per-pixel front-to-back contributor indices, saved by forward.
    lists: Vec<Vec<u32>>,
}

impl<T: Real> DiffOp<T> for RasterizeOp<T> {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (means2d, sigmas, payloads) = (x[0], x[1], x[2]);
        let n = sigmas.len();
        assert_eq!(means2d.shape(), [n, 2], "means2d must be [N,2]");
        assert_eq!(payloads.shape()[0], n, "payload row count mismatch");
        assert_eq!(self.depths.len(), n, "depth count mismatch");
        assert!(means2d.is_finite() && sigmas.is_finite(), "non-finite splat parameters");
        let p_dim = payloads.shape()[1];
        self.lists = build_pixel_lists(means2d.data(), sigmas.data(), &self.depths, &self.cfg);
        let (out, _) =
            composite_forward(means2d.data(), sigmas.data(), payloads.data(), p_dim, &self.lists, &self.cfg);
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (means2d, sigmas, payloads) = (x[0], x[1], x[2]);
        let (md, sd, pd) = (means2d.data(), sigmas.data(), payloads.data());
        let n = sigmas.len();
        let p_dim = payloads.shape()[1];
        let (w, h) = (self.cfg.width, self.cfg.height);
        let half = T::from_f64c(0.5);
        let one = T::one();

        let mut g_means = Tensor::zeros([n, 2]);
        let mut g_sigmas = Tensor::zeros(sigmas.shape().to_vec());
        let mut g_payloads = Tensor::zeros([n, p_dim]);
        {
            let gm = g_means.data_mut();
            // scratch reused across pixels: (index, alpha, clamped, T before)
            let mut chain: Vec<(usize, T, bool, T)> = Vec::new();
            let mut suffix = vec![T::zero(); p_dim + 1];
            let mut gs_buf = vec![T::zero(); n];
            let mut gp_buf = vec![T::zero(); n * p_dim];

            for y in 0..h {
                let py = T::from_usizec(y) + half;
                for xpx in 0..w {
                    let pix = y * w + xpx;
                    if self.lists[pix].is_empty() {
                        continue;
                    }
                    let px = T::from_usizec(xpx) + half;
                    let grow = &g.data()[pix * (p_dim + 1)..(pix + 1) * (p_dim + 1)];

                    // forward replay to recover the transmittance chain
                    chain.clear();
                    let mut t = one;
                    for &i in &self.lists[pix] {
                        let iu = i as usize;
                        let (a, clamped) = splat_alpha(md, sd, iu, px, py, self.cfg.alpha_max);
                        chain.push((iu, a, clamped, t));
                        t -= t * a;
                    }

                    // reverse sweep with suffix sums of downstream contributions
                    for s in suffix.iter_mut() {
                        *s = T::zero();
                    }
                    for &(iu, a, clamped, t_i) in chain.iter().rev() {
                        let ta = t_i * a;
                        // ∂out/∂y_i = T_i·a_i
                        for c in 0..p_dim {
                            gp_buf[iu * p_dim + c] += grow[c] * ta;
                        }
                        // ∂out_c/∂a_i = T_i·y_i[c] − suffix_c/(1−a_i)
                        let inv_keep = one / (one - a);
                        let mut ga = grow[p_dim] * (t_i - suffix[p_dim] * inv_keep);
                        for c in 0..p_dim {
                            ga += grow[c] * (t_i * pd[iu * p_dim + c] - suffix[c] * inv_keep);
                        }
                        for c in 0..p_dim {
                            suffix[c] += ta * pd[iu * p_dim + c];
                        }
                        suffix[p_dim] += ta;
                        if clamped {
                            continue; // a locally constant: nothing reaches w
                        }
                        // a = exp(−d²/(2σ²)):
                        //   ∂a/∂μ = a·(p−μ)/σ²,  ∂a/∂σ = a·d²/σ³
                        let s = sd[iu];
                        let dx = px - md[iu * 2];
                        let dy = py - md[iu * 2 + 1];
                        let inv_s2 = one / (s * s);
                        gm[iu * 2] += ga * a * dx * inv_s2;
                        gm[iu * 2 + 1] += ga * a * dy * inv_s2;
                        gs_buf[iu] += ga * a * (dx * dx + dy * dy) * inv_s2 / s;
                    }
                }
            }
            g_sigmas.data_mut().copy_from_slice(&gs_buf);
            g_payloads.data_mut().copy_from_slice(&gp_buf);
        }
        vec![
            needs[0].then_some(g_means),
            needs[1].then_some(g_sigmas),
            needs[2].then_some(g_payloads),
        ]
    }
}

/// Differentiable rasterization. `depths` order/cull the splats but carry no
/// gradient. Output is `[H,W,P+1]`: raw composited payload channels plus the
/// accumulated alpha.
pub fn rasterize<T: Real>(
    g: &mut Graph<T>,
    means2d: NodeId,
    sigmas: NodeId,
    payloads: NodeId,
    depths: Vec<T>,
    cfg: &RasterConfig<T>,
) -> NodeId {
    let op = RasterizeOp { depths, cfg: cfg.clone(), lists: Vec::new() };
    g.apply(Box::new(op), &[means2d, sigmas, payloads])
}

/// Plain rasterization for ground-truth generation and tests; also returns
/// the per-pixel final transmittance.
pub fn rasterize_plain<T: Real>(
    means2d: &Tensor<T>,
    sigmas: &Tensor<T>,
    payloads: &Tensor<T>,
    depths: &[T],
    cfg: &RasterConfig<T>,
) -> (Tensor<T>, Tensor<T>) {
    let lists = build_pixel_lists(means2d.data(), sigmas.data(), depths, cfg);
    composite_forward(
        means2d.data(),
        sigmas.data(),
        payloads.data(),
        payloads.shape()[1],
        &lists,
        cfg,
    )
}

/// Label map via winner-takes-front: each pixel takes the label of its
/// largest single contribution `T_i·a_i`, or 0 (background) when accumulated
/// alpha stays below ½.
pub fn rasterize_labels_plain<T: Real>(
    means2d: &Tensor<T>,
    sigmas: &Tensor<T>,
    labels: &[u8],
    depths: &[T],
    cfg: &RasterConfig<T>,
) -> Vec<u8> {
    let lists = build_pixel_lists(means2d.data(), sigmas.data(), depths, cfg);
    let (md, sd) = (means2d.data(), sigmas.data());
    let half = T::from_f64c(0.5);
    let mut out = vec![0u8; cfg.width * cfg.height];
    for y in 0..cfg.height {
        let py = T::from_usizec(y) + half;
        for x in 0..cfg.width {
            let pix = y * cfg.width + x;
            let px = T::from_usizec(x) + half;
            let mut t = T::one();
            let mut acc = T::zero();
            let mut best = T::zero();
            let mut best_label = 0u8;
            for &i in &lists[pix] {
                let iu = i as usize;
                let (a, _) = splat_alpha(md, sd, iu, px, py, cfg.alpha_max);
                let ta = t * a;
                if ta > best {
                    best = ta;
                    best_label = labels[iu];
                }
                acc += ta;
                t -= ta;
            }
            out[pix] = if acc >= half { best_label } else { 0 };
        }
    }
    out
}

// ---------------------------------------------------------------------------
// projection
// ---------------------------------------------------------------------------

/// Projected splat geometry on the graph, plus plain depths for ordering.
pub struct ProjectedSplats<T> {
    /// [N,2] pixel-space means.
    pub means2d: NodeId,
    /// [N] screen-space σ in pixels.
    pub sigmas: NodeId,
    /// [N,1] camera-space z (differentiable; also the depth payload).
    pub cam_z: NodeId,
    /// Raw z values for sorting/culling.
    pub depths: Vec<T>,
}

/// Perspective projection of world means and metric scales:
/// u = fx·x/ẑ + cx, v = fy·y/ẑ + cy, σ = s·fx/ẑ with ẑ = max(z, near).
///
/// The clamp keeps culled splats finite with exactly zero gradients.
pub fn project_splats<T: Real>(
    g: &mut Graph<T>,
    means3d: NodeId,
    scales: NodeId,
    camera: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> ProjectedSplats<T> {
    let n = g.shape(means3d)[0];
    assert_eq!(g.shape(means3d), [n, 3], "means3d must be [N,3]");
    assert_eq!(g.shape(scales), [n, 1], "scales must be [N,1]");

    // p_cam = R·p + t, as row vectors: p·Rᵀ + t
    let mut rt = vec![T::zero(); 9];
    for i in 0..3 {
        for j in 0..3 {
            rt[i * 3 + j] = camera.rot[j][i];
        }
    }
    let rt = g.constant(Tensor::from_vec([3, 3], rt));
    let tbias = g.constant(Tensor::from_vec([3], camera.trans.to_vec()));
    let rotated = g.matmul(means3d, rt);
    let cam_pts = g.add_bias(rotated, tbias);

    let x = g.slice_last(cam_pts, 0, 1);
    let y = g.slice_last(cam_pts, 1, 2);
    let z = g.slice_last(cam_pts, 2, 3);
    let z_safe = g.clamp_min(z, cfg.near);

    let u = {
        let q = g.div(x, z_safe);
        let q = g.mul_scalar(q, camera.fx);
        g.add_scalar(q, camera.cx)
    };
    let v = {
        let q = g.div(y, z_safe);
        let q = g.mul_scalar(q, camera.fy);
        g.add_scalar(q, camera.cy)
    };
    let means2d = g.concat_last(&[u, v]);
    let sig = {
        let q = g.div(scales, z_safe);
        let q = g.mul_scalar(q, camera.fx);
        g.reshape_node(q, vec![n])
    };
    let depths = g.value(z).data().to_vec();
    ProjectedSplats { means2d, sigmas: sig, cam_z: z, depths }
}

// ---------------------------------------------------------------------------
// full render pass
// ---------------------------------------------------------------------------

/// Rendered target channels, all graph nodes.
pub struct RenderOutputs {
    /// [H,W,3] color over a white background.
    pub rgb: NodeId,
    /// [H,W,3] alpha-normalized encoded normals ((n+1)/2 payload).
    pub normal: NodeId,
    /// [H,W,1] alpha-normalized camera depth.
    pub depth: NodeId,
    /// [H,W,1] accumulated alpha.
    pub silhouette: NodeId,
}

/// Project, rasterize, and split one camera view of a splat cloud.
///
/// `normals` are world-space unit vectors; they are stored in the payload as
/// (n+1)/2 so all channels share the [0,1] range of the supervision images.
pub fn render_gaussians<T: Real>(
    g: &mut Graph<T>,
    means3d: NodeId,
    scales: NodeId,
    colors: NodeId,
    normals: NodeId,
    camera: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> RenderOutputs {
    let proj = project_splats(g, means3d, scales, camera, cfg);
    let half = T::from_f64c(0.5);
    let enc = g.affine(normals, half, half);
    let payloads = g.concat_last(&[colors, enc, proj.cam_z]);
    let raster = rasterize(g, proj.means2d, proj.sigmas, payloads, proj.depths, cfg);

    let alpha = g.slice_last(raster, 7, 8);
    let rgb_raw = g.slice_last(raster, 0, 3);
    let bg = g.affine(alpha, -T::one(), T::one()); // 1 − A
    let rgb = g.add_bcast_last(rgb_raw, bg);
    let normal_raw = g.slice_last(raster, 3, 6);
    let normal = g.safe_div_bcast(normal_raw, alpha, cfg.alpha_floor);
    let depth_raw = g.slice_last(raster, 6, 7);
    let depth = g.safe_div_bcast(depth_raw, alpha, cfg.alpha_floor);
    RenderOutputs { rgb, normal, depth, silhouette: alpha }
}

/// Plain (value-only) variant of [`render_gaussians`] for data generation.
/// Runs the same graph code on constants so the two routes cannot diverge.
pub struct PlainRender<T: Real> {
    pub rgb: Tensor<T>,
    pub normal: Tensor<T>,
    pub depth: Tensor<T>,
    pub silhouette: Tensor<T>,
}

pub fn render_gaussians_plain<T: Real>(
    means3d: &Tensor<T>,
    scales: &Tensor<T>,
    colors: &Tensor<T>,
    normals: &Tensor<T>,
    camera: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> PlainRender<T> {
    let mut g = Graph::new();
    let m = g.constant(means3d.clone());
    let s = g.constant(scales.clone());
    let c = g.constant(colors.clone());
    let n = g.constant(normals.clone());
    let out = render_gaussians(&mut g, m, s, c, n, camera, cfg);
    PlainRender {
        rgb: g.value(out.rgb).clone(),
        normal: g.value(out.normal).clone(),
        depth: g.value(out.depth).clone(),
        silhouette: g.value(out.silhouette).clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_fn, CheckConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn small_cfg(w: usize, h: usize) -> RasterConfig<f64> {
        RasterConfig::new(w, h)
    }

    #[test]
    fn two_splat_compositing_matches_hand_formula() {
        // both splats centered exactly on pixel (1,1) center = (1.5, 1.5)
        let cfg = small_cfg(3, 3);
        let means = Tensor::from_vec([2, 2], vec![1.5, 1.5, 1.5, 1.5]);
        let sigmas = Tensor::from_vec([2], vec![2.0, 2.0]);
        let payloads = Tensor::from_vec([2, 1], vec![1.0, 0.5]);
        let depths = vec![1.0, 2.0];
        let (out, trans) = rasterize_plain(&means, &sigmas, &payloads, &depths, &cfg);
        // at the shared center w = 1 → clamped a = 0.999 for both
        let a = 0.999;
        let expect = a * 1.0 + (1.0 - a) * a * 0.5;
        let center = out.at3(1, 1, 0);
        assert_relative_eq!(center, expect, epsilon = 1e-9);
        // off-center pixel: d² = 2, w = exp(−2/(2·4))
        let w1: f64 = (-2.0f64 / 8.0).exp();
        let expect_off = w1 * 1.0 + (1.0 - w1) * w1 * 0.5;
        assert_relative_eq!(out.at3(0, 0, 0), expect_off, epsilon = 1e-9);
        // conservation: alpha + transmittance telescopes to 1
        assert_relative_eq!(out.at3(1, 1, 1) + trans.at2(1, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_plus_transmittance_is_one_everywhere() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 40;
        let cfg = small_cfg(16, 16);
        let means = Tensor::from_vec(
            [n, 2],
            (0..n * 2).map(|_| rng.gen_range(-2.0..18.0)).collect::<Vec<f64>>(),
        );
        let sigmas = Tensor::from_vec([n], (0..n).map(|_| rng.gen_range(0.3..4.0)).collect::<Vec<f64>>());
        let payloads = Tensor::from_vec([n, 2], (0..n * 2).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<f64>>());
        let depths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
        let (out, trans) = rasterize_plain(&means, &sigmas, &payloads, &depths, &cfg);
        for y in 0..16 {
            for x in 0..16 {
                assert_relative_eq!(out.at3(y, x, 2) + trans.at2(y, x), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn input_order_does_not_matter() {
        let cfg = small_cfg(8, 8);
        let means = Tensor::from_vec([3, 2], vec![4.0, 4.0, 3.0, 5.0, 5.0, 3.5]);
        let sigmas = Tensor::from_vec([3], vec![1.5, 2.0, 1.0]);
        let payloads = Tensor::from_vec([3, 1], vec![0.9, 0.4, 0.7]);
        let depths = vec![2.0, 1.0, 3.0];
        let (a, _) = rasterize_plain(&means, &sigmas, &payloads, &depths, &cfg);

        // permute inputs (distinct depths → same sorted order → same sums)
        let perm = [1usize, 2, 0];
        let means_p = Tensor::from_vec(
            [3, 2],
            perm.iter().flat_map(|&i| [means.at2(i, 0), means.at2(i, 1)]).collect::<Vec<f64>>(),
        );
        let sigmas_p = Tensor::from_vec([3], perm.iter().map(|&i| sigmas.data()[i]).collect::<Vec<f64>>());
        let payloads_p = Tensor::from_vec([3, 1], perm.iter().map(|&i| payloads.data()[i]).collect::<Vec<f64>>());
        let depths_p: Vec<f64> = perm.iter().map(|&i| depths[i]).collect();
        let (b, _) = rasterize_plain(&means_p, &sigmas_p, &payloads_p, &depths_p, &cfg);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn screen_radius_follows_projection() {
        // scale 0.02 m at depth 2 with f = 100 → σ = 1 px → 3σ radius = 3 px
        let cam = Camera::<f64>::identity(100.0, 16, 16);
        let cfg = small_cfg(16, 16);
        let mut g = Graph::new();
        let means = g.constant(Tensor::from_vec([2, 3], vec![0.0, 0.0, 2.0, 0.0, 0.0, 4.0]));
        let scales = g.constant(Tensor::from_vec([2, 1], vec![0.02, 0.02]));
        let proj = project_splats(&mut g, means, scales, &cam, &cfg);
        let sig = g.value(proj.sigmas);
        assert_relative_eq!(sig.data()[0], 1.0, epsilon = 1e-12);
        // doubling depth halves the radius
        assert_relative_eq!(sig.data()[1], 0.5, epsilon = 1e-12);
        assert_eq!(g.value(proj.means2d).data(), &[8.0, 8.0, 8.0, 8.0]);
        assert_eq!(proj.depths, vec![2.0, 4.0]);
    }

    #[test]
    fn splats_behind_camera_are_culled() {
        let cam = Camera::<f64>::identity(50.0, 8, 8);
        let cfg = small_cfg(8, 8);
        let means3d = Tensor::from_vec([1, 3], vec![0.0, 0.0, -1.0]);
        let scales = Tensor::from_vec([1, 1], vec![0.05]);
        let colors = Tensor::from_vec([1, 3], vec![1.0, 0.0, 0.0]);
        let normals = Tensor::from_vec([1, 3], vec![0.0, 0.0, -1.0]);
        let out = render_gaussians_plain(&means3d, &scales, &colors, &normals, &cam, &cfg);
        assert!(out.silhouette.data().iter().all(|&a| a == 0.0));
        assert!(out.rgb.data().iter().all(|&c| c == 1.0), "white background");
        assert!(out.depth.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn empty_scene_renders_white() {
        let cam = Camera::<f64>::identity(50.0, 4, 4);
        let cfg = small_cfg(4, 4);
        let out = render_gaussians_plain(
            &Tensor::zeros([0, 3]),
            &Tensor::zeros([0, 1]),
            &Tensor::zeros([0, 3]),
            &Tensor::zeros([0, 3]),
            &cam,
            &cfg,
        );
        assert!(out.rgb.data().iter().all(|&c| c == 1.0));
        assert!(out.silhouette.data().iter().all(|&a| a == 0.0));
    }

    #[test]
    fn single_centered_splat_hits_expected_color_and_alpha() {
        let cam = Camera::<f64>::identity(60.0, 9, 9);
        let cfg = small_cfg(9, 9);
        // centered on the middle pixel (4,4) center = (4.5, 4.5) = principal point
        let means3d = Tensor::from_vec([1, 3], vec![0.0, 0.0, 1.5]);
        let scales = Tensor::from_vec([1, 1], vec![0.05]);
        let colors = Tensor::from_vec([1, 3], vec![1.0, 0.0, 0.0]);
        let normals = Tensor::from_vec([1, 3], vec![0.0, 0.0, -1.0]);
        let out = render_gaussians_plain(&means3d, &scales, &colors, &normals, &cam, &cfg);
        assert_relative_eq!(out.silhouette.at3(4, 4, 0), 0.999, epsilon = 1e-12);
        assert_relative_eq!(out.rgb.at3(4, 4, 0), 1.0, epsilon = 2e-3);
        assert!(out.rgb.at3(4, 4, 1) < 2e-3);
        assert_relative_eq!(out.depth.at3(4, 4, 0), 1.5, epsilon = 1e-9);
    }

    #[test]
    fn color_gradient_equals_composited_alpha() {
        // ∂ Σ_p rgb_r(p) / ∂ color_r = Σ_p T_p·a_p = Σ_p alpha contribution
        let cam = Camera::<f64>::identity(60.0, 9, 9);
        let cfg = small_cfg(9, 9);
        let mut g = Graph::new();
        let means3d = g.constant(Tensor::from_vec([1, 3], vec![0.05, -0.03, 1.5]));
        let scales = g.constant(Tensor::from_vec([1, 1], vec![0.04]));
        let colors = g.param(Tensor::from_vec([1, 3], vec![0.8, 0.2, 0.1]));
        let normals = g.constant(Tensor::from_vec([1, 3], vec![0.0, 0.0, -1.0]));
        let out = render_gaussians(&mut g, means3d, scales, colors, normals, &cam, &cfg);
        let alpha_total: f64 = g.value(out.silhouette).sum();
        let red = g.slice_last(out.rgb, 0, 1);
        let loss = g.sum(red);
        let grads = g.backward(loss);
        let gc = grads.get(colors).unwrap();
        assert_relative_eq!(gc.data()[0], alpha_total, epsilon = 1e-12);
        assert_eq!(gc.data()[1], 0.0);
    }

    #[test]
    fn rasterizer_gradients_match_finite_differences() {
        // 5 splats on a 16×16 canvas, checking means, sigmas, and payloads
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 5;
        let cfg = small_cfg(16, 16);
        let means = Tensor::from_vec(
            [n, 2],
            (0..n * 2).map(|_| rng.gen_range(3.0..13.0)).collect::<Vec<f64>>(),
        );
        let sigmas =
            Tensor::from_vec([n], (0..n).map(|_| rng.gen_range(0.8..2.5)).collect::<Vec<f64>>());
        let payloads = Tensor::from_vec(
            [n, 2],
            (0..n * 2).map(|_| rng.gen_range(0.1..0.9)).collect::<Vec<f64>>(),
        );
        let depths: Vec<f64> = (0..n).map(|i| 1.0 + 0.7 * i as f64).collect();

        let report = check_fn(
            "rasterize",
            &[means, sigmas, payloads],
            |g, ids| {
                let r = rasterize(g, ids[0], ids[1], ids[2], depths.clone(), &cfg);
                // weight channels unevenly so gradients don't cancel
                let w = g.constant(Tensor::from_vec(
                    [16, 16, 3],
                    (0..16 * 16 * 3).map(|i| 0.3 + 0.001 * i as f64).collect::<Vec<f64>>(),
                ));
                let prod = g.mul(r, w);
                g.sum(prod)
            },
            CheckConfig::with_tol(1e-3), // support-boundary crossings
        );
        assert!(report.pass(), "{}", report.line());
    }

    #[test]
    fn full_projection_chain_gradients_match_finite_differences() {
        let cam = Camera::<f64>::look_at([0.3, 0.2, -2.0], [0.0, 0.0, 0.0], 40.0, 12, 12);
        let cfg = small_cfg(12, 12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let means3d = Tensor::from_vec(
            [n, 3],
            (0..n)
                .flat_map(|i| {
                    [
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                        0.4 * i as f64 + rng.gen_range(-0.05..0.05),
                    ]
                })
                .collect::<Vec<f64>>(),
        );
        let scales = Tensor::from_vec([n, 1], (0..n).map(|_| rng.gen_range(0.02..0.06)).collect::<Vec<f64>>());
        let colors = Tensor::from_vec([n, 3], (0..n * 3).map(|_| rng.gen_range(0.1..0.9)).collect::<Vec<f64>>());
        let normals = Tensor::from_vec(
            [n, 3],
            (0..n).flat_map(|_| [0.0, 0.0, -1.0]).collect::<Vec<f64>>(),
        );

        let report = check_fn(
            "render_chain",
            &[means3d, scales, colors, normals],
            |g, ids| {
                let out = render_gaussians(g, ids[0], ids[1], ids[2], ids[3], &cam, &cfg);
                let a = g.sum(out.rgb);
                let b = g.sum(out.normal);
                let c = g.sum(out.depth);
                let d = g.sum(out.silhouette);
                let ab = g.add(a, b);
                let cd = g.add(c, d);
                g.add(ab, cd)
            },
            CheckConfig::with_tol(1e-3),
        );
        assert!(report.pass(), "{}", report.line());
    }

    #[test]
    fn out_of_frustum_splats_get_zero_gradients() {
        let cam = Camera::<f64>::identity(50.0, 8, 8);
        let cfg = small_cfg(8, 8);
        let mut g = Graph::new();
        // splat 0 visible, splat 1 behind the camera, splat 2 far off-screen
        let means3d = g.param(Tensor::from_vec(
            [3, 3],
            vec![0.0, 0.0, 1.0, 0.0, 0.0, -2.0, 50.0, 0.0, 1.0],
        ));
        let scales = g.param(Tensor::from_vec([3, 1], vec![0.03; 3]));
        let colors = g.param(Tensor::from_vec([3, 3], vec![0.5; 9]));
        let normals = g.constant(Tensor::from_vec(
            [3, 3],
            (0..3).flat_map(|_| [0.0, 0.0, -1.0]).collect::<Vec<f64>>(),
        ));
        let out = render_gaussians(&mut g, means3d, scales, colors, normals, &cam, &cfg);
        let a = g.sum(out.rgb);
        let b = g.sum(out.silhouette);
        let loss = g.add(a, b);
        let grads = g.backward(loss);
        let gm = grads.get(means3d).unwrap();
        let gs = grads.get(scales).unwrap();
        let gc = grads.get(colors).unwrap();
        // visible splat has signal
        assert!(gm.data()[..3].iter().any(|&v| v != 0.0));
        // culled and off-screen splats are exactly zero everywhere
        for i in 1..3 {
            assert_eq!(&gm.data()[i * 3..i * 3 + 3], &[0.0; 3], "mean grad splat {i}");
            assert_eq!(gs.data()[i], 0.0, "scale grad splat {i}");
            assert_eq!(&gc.data()[i * 3..i * 3 + 3], &[0.0; 3], "color grad splat {i}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adding_a_splat_never_decreases_silhouette(
            seed in 0u64..1000,
            n in 1usize..8,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cfg = small_cfg(8, 8);
            let mut means: Vec<f64> = Vec::new();
            let mut sigmas: Vec<f64> = Vec::new();
            let mut depths: Vec<f64> = Vec::new();
            for _ in 0..=n {
                means.push(rng.gen_range(0.0..8.0));
                means.push(rng.gen_range(0.0..8.0));
                sigmas.push(rng.gen_range(0.3..3.0));
                depths.push(rng.gen_range(0.2..4.0));
            }
            let payload = Tensor::from_vec([n + 1, 1], vec![0.5; n + 1]);
            let (base, _) = rasterize_plain(
                &Tensor::from_vec([n, 2], means[..n * 2].to_vec()),
                &Tensor::from_vec([n], sigmas[..n].to_vec()),
                &Tensor::from_vec([n, 1], vec![0.5; n]),
                &depths[..n],
                &cfg,
            );
            let (more, _) = rasterize_plain(
                &Tensor::from_vec([n + 1, 2], means),
                &Tensor::from_vec([n + 1], sigmas),
                &payload,
                &depths,
                &cfg,
            );
            for p in 0..64 {
                let a0 = base.data()[p * 2 + 1];
                let a1 = more.data()[p * 2 + 1];
                prop_assert!(a1 >= a0 - 1e-12, "pixel {p}: {a1} < {a0}");
            }
        }
    }
}
