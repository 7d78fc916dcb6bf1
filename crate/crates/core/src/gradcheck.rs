//! Gradient verification: central finite differences against the tape's
//! analytic backward pass.
//!
//! Checks are phrased as graph-building closures, so any composition of ops —
//! from a single primitive up to the full render-and-loss chain — is checked
//! the same way. The registry (assembled in [`registry`]) is what the CLI
//! `gradcheck` subcommand and the acceptance suite run.

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rand::Rng;

/// Central-difference gradient estimate of a scalar function.
pub fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + eps;
        let fp = f(&xs);
        xs[i] = orig - eps;
        let fm = f(&xs);
        xs[i] = orig;
        grad.push((fp - fm) / (2.0 * eps));
    }
    grad
}

/// Settings for one check.
#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub eps: f64,
    pub tol_rel: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol_rel: 1e-4 }
    }
}

impl CheckConfig {
    pub fn with_tol(tol_rel: f64) -> Self {
        Self { tol_rel, ..Self::default() }
    }
}

/// Outcome of comparing analytic and numeric gradients for one check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub tol_rel: f64,
    /// Worst relative error over all checked coordinates.
    pub max_rel: f64,
    pub max_abs: f64,
    /// (input index, flat coordinate) of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    /// Coordinates where the function evaluated non-finite.
    pub non_finite: usize,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.non_finite == 0 && self.max_rel <= self.tol_rel
    }

    pub fn line(&self) -> String {
        format!(
            "{:5} {:<44} max_rel {:10.3e} (tol {:8.1e}, {} coords{})",
            if self.pass() { "pass" } else { "FAIL" },
            self.name,
            self.max_rel,
            self.tol_rel,
            self.coords_checked,
            if self.non_finite > 0 { format!(", {} non-finite", self.non_finite) } else { String::new() },
        )
    }
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs())).max(1e-8)
}

/// Check the gradient of `build` (a scalar-rooted graph over the given input
/// tensors, all treated as differentiable) against central differences.
pub fn check_fn<B>(name: &str, inputs: &[Tensor<f64>], build: B, cfg: CheckConfig) -> GradReport
where
    B: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    run_check(name, inputs, build, cfg, false)
}

/// Same comparison but with the analytic gradient's sign flipped — the
/// negative control. A healthy check harness must FAIL this (rel. error ≈ 2
/// wherever the gradient is nonzero).
pub fn check_fn_corrupted<B>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: B,
    cfg: CheckConfig,
) -> GradReport
where
    B: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    run_check(name, inputs, build, cfg, true)
}

fn run_check<B>(
    name: &str,
    inputs: &[Tensor<f64>],
    build: B,
    cfg: CheckConfig,
    flip_sign: bool,
) -> GradReport
where
    B: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    // Analytic pass.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &ids);
    assert_eq!(g.value(root).len(), 1, "check root must be scalar");
    let grads = g.backward(root);
    let analytic: Vec<Tensor<f64>> =
        ids.iter().zip(inputs).map(|(&id, t)| grads.get_or_zero(id, t.shape())).collect();

    // Numeric pass: evaluate the scalar with one coordinate of one input
    // perturbed, everything else fixed.
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &ids);
        g.item(root)
    };

    let mut report = GradReport {
        name: name.to_string(),
        tol_rel: cfg.tol_rel,
        max_rel: 0.0,
        max_abs: 0.0,
        worst: None,
        coords_checked: 0,
        non_finite: 0,
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ci in 0..input.len() {
            let orig = input.data()[ci];
            work[ti].data_mut()[ci] = orig + cfg.eps;
            let fp = eval(&work);
            work[ti].data_mut()[ci] = orig - cfg.eps;
            let fm = eval(&work);
            work[ti].data_mut()[ci] = orig;

            if !fp.is_finite() || !fm.is_finite() {
                report.non_finite += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let mut a = analytic[ti].data()[ci];
            if flip_sign {
                a = -a;
            }
            let re = rel_err(a, numeric);
            let ae = (a - numeric).abs();
            report.coords_checked += 1;
            report.max_abs = report.max_abs.max(ae);
            if re > report.max_rel {
                report.max_rel = re;
                report.worst = Some((ti, ci));
            }
        }
    }
    report
}

/// A named, self-contained gradient check.
pub struct RegisteredCheck {
    pub name: &'static str,
    pub run: Box<dyn Fn() -> GradReport>,
}

/// Deterministic fixture tensor: values spread over ±scale.
fn fixture(shape: impl Into<Vec<usize>>, seed: u64, scale: f64) -> Tensor<f64> {
    use rand::Rng as _;
    use rand::SeedableRng as _;
    let shape = shape.into();
    let len = shape.iter().product();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-scale..scale)).collect::<Vec<f64>>())
}

fn rng_for(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng as _;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Reduce a tensor to a scalar through fixed uneven weights, so transposed
/// or permuted gradients cannot cancel out.
fn uneven_sum(g: &mut Graph<f64>, x: NodeId) -> NodeId {
    let shape = g.shape(x).to_vec();
    let len: usize = shape.iter().product();
    let w = Tensor::from_vec(
        shape,
        (0..len).map(|i| 0.3 + 0.7 * ((i * 2654435761) % 97) as f64 / 96.0).collect::<Vec<f64>>(),
    );
    let wn = g.constant(w);
    let p = g.mul(x, wn);
    g.sum(p)
}

fn check(name: &'static str, tol: f64, run: impl Fn(CheckConfig) -> GradReport + 'static) -> RegisteredCheck {
    RegisteredCheck { name, run: Box::new(move || run(CheckConfig::with_tol(tol))) }
}

/// The standard gradient suite: representative primitive ops plus every
/// differentiable stage of the pipeline (skinning, normals, rasterization,
/// the full camera chain, triplane codec, graph convolution, the recurrent
/// cloth rollout, and the losses). Rasterization checks run at a relaxed
/// tolerance because finite differences can step across a splat's support
/// boundary; everything else uses the default.
pub fn registry() -> Vec<RegisteredCheck> {
    use crate::body::{self, Joint, Pose, SkinnedMesh};
    use crate::cloth;
    use crate::codec;
    use crate::loss;
    use crate::nn::ParamStore;
    use crate::render;

    let mut checks: Vec<RegisteredCheck> = Vec::new();

    checks.push(check("ops.nonlinear_chain", 1e-4, |cfg| {
        check_fn(
            "ops.nonlinear_chain",
            &[fixture([6], 101, 1.2)],
            |g, ids| {
                let t = g.tanh(ids[0]);
                let s = g.sigmoid(t);
                let sp = g.softplus(s);
                uneven_sum(g, sp)
            },
            cfg,
        )
    }));

    checks.push(check("ops.matmul_bias", 1e-4, |cfg| {
        check_fn(
            "ops.matmul_bias",
            &[fixture([3, 4], 102, 0.8), fixture([4, 2], 103, 0.8), fixture([2], 104, 0.5)],
            |g, ids| {
                let y = g.matmul(ids[0], ids[1]);
                let y = g.add_bias(y, ids[2]);
                uneven_sum(g, y)
            },
            cfg,
        )
    }));

    checks.push(check("ops.reductions", 1e-4, |cfg| {
        check_fn(
            "ops.reductions",
            &[fixture([3, 3], 105, 0.9), fixture([3, 3], 106, 0.9)],
            |g, ids| {
                let a = g.l1(ids[0], ids[1]);
                let b = g.mse(ids[0], ids[1]);
                let c = g.mean(ids[0]);
                let ab = g.add(a, b);
                g.add(ab, c)
            },
            cfg,
        )
    }));

    checks.push(check("ops.row_geometry", 1e-4, |cfg| {
        check_fn(
            "ops.row_geometry",
            &[fixture([4, 3], 107, 1.0), fixture([4, 3], 108, 1.0)],
            |g, ids| {
                let n = g.normalize_rows(ids[0], 1e-12);
                let d = g.dot_rows(n, ids[1]);
                uneven_sum(g, d)
            },
            cfg,
        )
    }));

    checks.push(check("ops.classifier_pick", 1e-4, |cfg| {
        check_fn(
            "ops.classifier_pick",
            &[fixture([5, 4], 109, 1.5)],
            |g, ids| {
                let lp = g.log_softmax_rows(ids[0]);
                let picked = g.take_per_row(lp, &[1, 3, 0, 2, 2]);
                let m = g.mean(picked);
                g.mul_scalar(m, -1.0)
            },
            cfg,
        )
    }));

    checks.push(check("ops.conv_stack", 1e-4, |cfg| {
        check_fn(
            "ops.conv_stack",
            &[fixture([2, 4, 4], 110, 0.7), fixture([2, 2, 3, 3], 111, 0.5), fixture([2], 112, 0.3)],
            |g, ids| {
                let up = g.upsample2x(ids[0]);
                let c = g.conv3x3(up, ids[1], ids[2]);
                let r = g.relu(c);
                uneven_sum(g, r)
            },
            cfg,
        )
    }));

    checks.push(check("body.skinning", 1e-4, |cfg| {
        let joints = vec![
            Joint { name: "root".into(), parent: None, rest: [0.0, 0.0, 0.0] },
            Joint { name: "mid".into(), parent: Some(0), rest: [0.0, 0.3, 0.0] },
            Joint { name: "tip".into(), parent: Some(1), rest: [0.0, 0.6, 0.0] },
        ];
        let weights = Tensor::from_vec(
            [4, 3],
            vec![0.6, 0.3, 0.1, 0.2, 0.5, 0.3, 0.1, 0.2, 0.7, 0.3, 0.4, 0.3],
        );
        let vertices = fixture([4, 3], 113, 0.4);
        let mesh = SkinnedMesh {
            vertices: vertices.clone(),
            faces: vec![[0, 1, 2], [1, 2, 3]],
            joints,
            skin_weights: weights,
            part_hint: vec![body::PartHint::Limb; 4],
        };
        let pose = Pose {
            joint_rotations: vec![[0.1, -0.05, 0.2], [0.0, 0.25, 0.1], [0.3, 0.0, -0.2]],
            root_translation: [0.05, -0.02, 0.1],
            timestamp: 0.0,
        };
        let offsets = fixture([4, 3], 114, 0.02);
        check_fn(
            "body.skinning",
            &[vertices, offsets],
            move |g, ids| {
                let out = body::lbs_deform(g, ids[0], ids[1], &pose, &mesh);
                uneven_sum(g, out)
            },
            cfg,
        )
    }));

    checks.push(check("body.vertex_normals", 1e-4, |cfg| {
        let (v, f) = body::uv_sphere([0.0, 0.0, 0.0], 0.5, 6, 4);
        let vertices = Tensor::from_vec([v.len(), 3], v.iter().flatten().copied().collect::<Vec<f64>>());
        check_fn(
            "body.vertex_normals",
            &[vertices],
            move |g, ids| {
                let n = body::vertex_normals(g, ids[0], &f);
                uneven_sum(g, n)
            },
            cfg,
        )
    }));

    checks.push(check("render.rasterize", 1e-3, |cfg| {
        let rc = render::RasterConfig::<f64>::new(16, 16);
        // seeded positions; hand-picked grids risk landing a pixel center
        // exactly on a splat's support circle, where the footprint test is
        // discontinuous and finite differences blow up
        let mut rng = rng_for(115);
        let n = 4;
        let mut mean_vals = Vec::with_capacity(n * 2);
        let mut sigma_vals = Vec::with_capacity(n);
        let mut payload_vals = Vec::with_capacity(n * 2);
        let mut depths = Vec::with_capacity(n);
        for i in 0..n {
            mean_vals.push(rng.gen_range(3.0..13.0));
            mean_vals.push(rng.gen_range(3.0..13.0));
            sigma_vals.push(rng.gen_range(0.8..2.5));
            payload_vals.push(rng.gen_range(0.1..0.9));
            payload_vals.push(rng.gen_range(0.1..0.9));
            depths.push(1.0 + 0.7 * i as f64);
        }
        let means = Tensor::from_vec([n, 2], mean_vals);
        let sigmas = Tensor::from_vec([n], sigma_vals);
        let payloads = Tensor::from_vec([n, 2], payload_vals);
        check_fn(
            "render.rasterize",
            &[means, sigmas, payloads],
            move |g, ids| {
                let out = render::rasterize(g, ids[0], ids[1], ids[2], depths.clone(), &rc);
                uneven_sum(g, out)
            },
            cfg,
        )
    }));

    checks.push(check("render.camera_chain", 1e-3, |cfg| {
        let camera = crate::body::Camera::look_at([0.6, 0.4, 2.2], [0.0, 0.0, 0.0], 24.0, 16, 16);
        let rc = render::RasterConfig::<f64>::new(16, 16);
        let means3d = Tensor::from_vec(
            [3, 3],
            vec![0.05, 0.02, 0.1, -0.12, 0.08, -0.05, 0.03, -0.1, 0.02],
        );
        let scales = Tensor::from_vec([3, 1], vec![0.05, 0.07, 0.06]);
        let colors = fixture([3, 3], 116, 0.4);
        let normals = fixture([3, 3], 117, 0.8);
        check_fn(
            "render.camera_chain",
            &[means3d, scales, colors, normals],
            move |g, ids| {
                let out = render::render_gaussians(g, ids[0], ids[1], ids[2], ids[3], &camera, &rc);
                let a = uneven_sum(g, out.rgb);
                let b = uneven_sum(g, out.normal);
                let c = uneven_sum(g, out.depth);
                let d = uneven_sum(g, out.silhouette);
                let ab = g.add(a, b);
                let cd = g.add(c, d);
                g.add(ab, cd)
            },
            cfg,
        )
    }));

    checks.push(check("codec.triplane_sample", 1e-4, |cfg| {
        let planes = [fixture([3, 6, 6], 118, 0.6), fixture([3, 6, 6], 119, 0.6), fixture([3, 6, 6], 120, 0.6)];
        // probe points strictly between grid lines so the bilinear kink is
        // never straddled
        let points = Tensor::from_vec(
            [4, 3],
            vec![0.17, -0.42, 0.33, -0.81, 0.24, -0.13, 0.57, 0.61, -0.37, -0.23, -0.68, 0.49],
        );
        check_fn(
            "codec.triplane_sample",
            &[planes[0].clone(), planes[1].clone(), planes[2].clone(), points],
            |g, ids| {
                let feats = codec::triplane_sample(g, [ids[0], ids[1], ids[2]], ids[3], -1.3, 1.3);
                uneven_sum(g, feats)
            },
            cfg,
        )
    }));

    checks.push(check("codec.avatar_chain", 1e-4, |cfg| {
        let tc = codec::TriplaneConfig {
            channels: 3,
            resolution: 8,
            latent_dim: 5,
            head_hidden: 6,
            ..codec::TriplaneConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_for(121);
        let avatar = codec::StaticAvatar::new(&mut store, "av", tc, &mut rng).unwrap();
        // non-zero heads so attribute gradients are alive
        for name in ["av.heads.geo.1.w", "av.heads.app.1.w"] {
            if let Some(id) = store.by_name(name) {
                let shape = store.get(id).shape().to_vec();
                store.set(id, fixture(shape, 122, 0.4));
            }
        }
        let points = Tensor::from_vec(
            [3, 3],
            vec![0.21, -0.37, 0.43, -0.52, 0.18, -0.29, 0.34, 0.57, -0.41],
        );
        check_fn(
            "codec.avatar_chain",
            &[points],
            move |g, ids| {
                let bind = store.bind(g);
                let (heads, feats) = avatar.forward(g, &bind, ids[0]);
                let a = uneven_sum(g, heads.offsets);
                let b = uneven_sum(g, heads.colors);
                let c = uneven_sum(g, heads.scales);
                let d = uneven_sum(g, feats);
                let ab = g.add(a, b);
                let cd = g.add(c, d);
                g.add(ab, cd)
            },
            cfg,
        )
    }));

    checks.push(check("cloth.graph_conv", 1e-4, |cfg| {
        let adj = cloth::normalized_adjacency::<f64>(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_for(123);
        let enc = cloth::GcnEncoder::new(&mut store, "g", 3, 4, &mut rng);
        check_fn(
            "cloth.graph_conv",
            &[fixture([4, 3], 124, 0.8)],
            move |g, ids| {
                let bind = store.bind(g);
                let h = enc.forward(g, &bind, &adj, ids[0]);
                uneven_sum(g, h)
            },
            cfg,
        )
    }));

    checks.push(check("cloth.rollout", 1e-4, |cfg| {
        let cc = cloth::ClothConfig {
            model_dim: 3,
            node_feat_dim: 2,
            window_span: 0.4,
            ..cloth::ClothConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_for(125);
        let model = cloth::ClothDynamics::new(&mut store, "cd", cc, 4, &mut rng).unwrap();
        for name in ["cd.head.1.w", "cd.head.1.b"] {
            let id = store.by_name(name).unwrap();
            let shape = store.get(id).shape().to_vec();
            store.set(id, fixture(shape, 126, 0.4));
        }
        let adj = cloth::normalized_adjacency::<f64>(3, &[(0, 1), (1, 2)]);
        check_fn(
            "cloth.rollout",
            &[fixture([3, 2], 127, 0.6), fixture([1, 18], 128, 0.9), fixture([1, 18], 129, 0.9), fixture([1, 18], 130, 0.9)],
            move |g, ids| {
                let bind = store.bind(g);
                let steps = model.forward(g, &bind, &adj, ids[0], &[ids[1], ids[2], ids[3]]);
                let mut total: Option<NodeId> = None;
                for s in &steps {
                    for part in [s.dx, s.dc, s.ds] {
                        let u = uneven_sum(g, part);
                        total = Some(match total {
                            None => u,
                            Some(t) => g.add(t, u),
                        });
                    }
                }
                total.unwrap()
            },
            cfg,
        )
    }));

    checks.push(check("loss.photometric", 1e-4, |cfg| {
        let pred = fixture([8, 8, 2], 131, 0.5);
        let gt = fixture([8, 8, 2], 132, 0.5);
        check_fn(
            "loss.photometric",
            &[pred, gt],
            |g, ids| {
                let s = loss::ssim_loss(g, ids[0], ids[1]);
                let p = loss::perceptual_loss(g, ids[0], ids[1]);
                let l = g.l1(ids[0], ids[1]);
                let sp = g.add(s, p);
                g.add(sp, l)
            },
            cfg,
        )
    }));

    checks.push(check("loss.geometry", 1e-4, |cfg| {
        let mut rng = rng_for(133);
        use rand::Rng as _;
        let (h, w) = (5, 5);
        let mut enc = Vec::new();
        for _ in 0..h * w {
            let v: [f64; 3] =
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            enc.extend(v.iter().map(|x| (x / n + 1.0) / 2.0));
        }
        let gt_normal = Tensor::from_vec([h, w, 3], enc);
        let gt_depth = fixture([h, w, 1], 134, 0.5);
        let gt_sil = fixture([h, w, 1], 135, 0.5);
        let mask = Tensor::from_vec([h, w], (0..h * w).map(|i| (i % 2 == 0) as usize as f64).collect::<Vec<f64>>());
        let weights = loss::LossWeights::<f64>::default();
        let pred_normal = fixture([h, w, 3], 136, 0.5);
        let pred_depth = fixture([h, w, 1], 137, 0.5);
        let pred_sil = fixture([h, w, 1], 138, 0.5);
        check_fn(
            "loss.geometry",
            &[pred_normal, pred_depth, pred_sil],
            move |g, ids| {
                let t = loss::geometry_loss(
                    g, ids[0], ids[1], ids[2], &gt_normal, &gt_depth, &gt_sil, &mask, &weights,
                );
                t.combined
            },
            cfg,
        )
    }));

    checks.push(check("loss.temporal", 1e-4, |cfg| {
        let steps = [fixture([4, 3], 139, 0.05), fixture([4, 3], 140, 0.05), fixture([4, 3], 141, 0.05)];
        check_fn(
            "loss.temporal",
            &steps,
            |g, ids| {
                let t = loss::temporal_loss(g, ids);
                let m = loss::magnitude_penalty(g, ids);
                g.add(t, m)
            },
            cfg,
        )
    }));

    checks
}

/// Negative control: the same machinery with the analytic gradient's sign
/// deliberately flipped. A healthy suite must report this as a failure with
/// relative error near 2.
pub fn negative_control() -> GradReport {
    check_fn_corrupted(
        "negative_control(sign_flip)",
        &[fixture([5], 999, 1.0)],
        |g, ids| {
            let sq = g.mul(ids[0], ids[0]);
            let t = g.tanh(ids[0]);
            let s = g.add(sq, t);
            uneven_sum(g, s)
        },
        CheckConfig::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn finite_diff_quadratic() {
        // f(x) = |x|^2 at (1,2): gradient (2,4), exact to O(eps^2)
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let grad = finite_diff(&mut f, &[1.0, 2.0], 1e-5);
        assert_relative_eq!(grad[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(grad[1], 4.0, epsilon = 1e-8);
    }

    #[test]
    fn finite_diff_constant_function() {
        let mut f = |_: &[f64]| 7.25;
        let grad = finite_diff(&mut f, &[0.1, -3.0, 42.0], 1e-5);
        for g in grad {
            assert!(g.abs() < 1e-10);
        }
    }

    #[test]
    fn finite_diff_matches_analytic_cosine() {
        let mut f = |x: &[f64]| x[0].sin();
        let grad = finite_diff(&mut f, &[0.3], 1e-5);
        assert_relative_eq!(grad[0], 0.3f64.cos(), epsilon = 1e-9);
    }

    #[test]
    fn linear_op_checks_essentially_exactly() {
        let w = Tensor::from_vec([3, 2], vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]);
        let x = Tensor::from_vec([2, 1], vec![0.8, -0.3]);
        let report = check_fn(
            "linear",
            &[w, x],
            |g, ids| {
                let y = g.matmul(ids[0], ids[1]);
                g.sum(y)
            },
            CheckConfig { eps: 1e-5, tol_rel: 1e-10 },
        );
        assert!(report.pass(), "{}", report.line());
    }

    #[test]
    fn sign_flip_negative_control_fails_loudly() {
        let x = Tensor::from_vec([3], vec![0.4, -0.2, 0.9]);
        let report = check_fn_corrupted(
            "corrupted",
            &[x],
            |g, ids| {
                let sq = g.mul(ids[0], ids[0]);
                g.sum(sq)
            },
            CheckConfig::default(),
        );
        assert!(!report.pass());
        assert_relative_eq!(report.max_rel, 2.0, epsilon = 1e-3);
    }

    #[test]
    fn registry_runs_green_and_control_fails() {
        for check in registry() {
            let report = (check.run)();
            assert!(report.pass(), "{} worst={:?}", report.line(), report.worst);
        }
        let control = negative_control();
        assert!(!control.pass(), "negative control must fail: {}", control.line());
        assert!((control.max_rel - 2.0).abs() < 1e-2);
    }

    #[test]
    fn nonlinear_chain_passes_default_tolerance() {
        let x = Tensor::from_vec([4], vec![0.3, -0.6, 1.1, 0.05]);
        let report = check_fn(
            "tanh_sigmoid_chain",
            &[x],
            |g, ids| {
                let t = g.tanh(ids[0]);
                let s = g.sigmoid(t);
                let sp = g.softplus(s);
                g.mean(sp)
            },
            CheckConfig::default(),
        );
        assert!(report.pass(), "{}", report.line());
    }
}
