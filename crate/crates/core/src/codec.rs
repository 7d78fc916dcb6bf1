//! Static avatar representation: a per-subject latent code decoded into three
//! orthogonal feature planes, sampled at canonical vertex positions, and
//! turned into per-Gaussian attributes by two small heads.
//!
//! - Decoder: latent → dense layer → three seed planes → per plane, two
//!   rounds of nearest-neighbor upsampling + 3×3 convolution (ReLU between).
//! - Sampling: a 3D point (x,y,z) reads the x-plane at (y,z), the y-plane at
//!   (x,z), the z-plane at (x,y), each bilinearly with border clamping; the
//!   three feature vectors concatenate to 3·C dims.
//! - Geometry head: features → MLP → tanh·δ_max canonical offsets.
//! - Appearance head: features → MLP → sigmoid colors and softplus+s_min
//!   scales, so colors stay in (0,1) and scales stay above the floor.
//!
//! Final head layers initialize to zero: a fresh avatar has exactly zero
//! offsets, 0.5 gray colors, and softplus(0)+s_min scales.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DiffOp, Graph, NodeId};
use crate::nn::{Binding, Conv3x3Layer, Linear, Mlp, ParamId, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriplaneConfig {
    /// Channels per plane; sampled features are 3× this.
    pub channels: usize,
    /// Plane height/width; must be divisible by 4 (two upsampling rounds).
    pub resolution: usize,
    pub latent_dim: usize,
    /// Canonical-space cube mapped onto the planes.
    pub lo: f64,
    pub hi: f64,
    /// Offset bound δ_max (meters) applied via tanh.
    pub delta_max: f64,
    /// Scale floor s_min (meters) added after softplus.
    pub scale_min: f64,
    /// Hidden width of both heads.
    pub head_hidden: usize,
}

impl Default for TriplaneConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            resolution: 128,
            latent_dim: 64,
            lo: -1.3,
            hi: 1.3,
            delta_max: 0.05,
            scale_min: 0.001,
            head_hidden: 64,
        }
    }
}

impl TriplaneConfig {
    pub fn feature_dim(&self) -> usize {
        3 * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_multiple_of(4) || self.resolution < 4 {
            return Err(Error::Config(format!(
                "plane resolution {} must be a positive multiple of 4",
                self.resolution
            )));
        }
        if self.channels == 0 || self.latent_dim == 0 || self.head_hidden == 0 {
            return Err(Error::Config("channels, latent_dim, head_hidden must be positive".into()));
        }
        if !(self.hi > self.lo) {
            return Err(Error::Config("triplane bounds must satisfy lo < hi".into()));
        }
        if self.delta_max <= 0.0 || self.scale_min <= 0.0 {
            return Err(Error::Config("delta_max and scale_min must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// decoder
// ---------------------------------------------------------------------------

pub struct TriplaneDecoder {
    dense: Linear,
    convs: Vec<(Conv3x3Layer, Conv3x3Layer)>,
    channels: usize,
    seed_res: usize,
}

impl TriplaneDecoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &TriplaneConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let seed_res = cfg.resolution / 4;
        let seed_len = cfg.channels * seed_res * seed_res;
        let dense = Linear::new(store, &format!("{prefix}.dense"), cfg.latent_dim, 3 * seed_len, rng);
        let convs = (0..3)
            .map(|k| {
                (
                    Conv3x3Layer::new(
                        store,
                        &format!("{prefix}.plane{k}.conv1"),
                        cfg.channels,
                        cfg.channels,
                        rng,
                    ),
                    Conv3x3Layer::new(
                        store,
                        &format!("{prefix}.plane{k}.conv2"),
                        cfg.channels,
                        cfg.channels,
                        rng,
                    ),
                )
            })
            .collect();
        Self { dense, convs, channels: cfg.channels, seed_res }
    }

    /// Decode a `[1,latent_dim]` latent into three `[C,R,R]` planes.
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        latent: NodeId,
    ) -> [NodeId; 3] {
        let (c, s) = (self.channels, self.seed_res);
        let seed_len = c * s * s;
        let h = self.dense.forward(g, bind, latent);
        let flat = g.reshape_node(h, vec![3 * seed_len]);
        let mut planes = Vec::with_capacity(3);
        for (k, (conv1, conv2)) in self.convs.iter().enumerate() {
            let seed = g.slice_last(flat, k * seed_len, (k + 1) * seed_len);
            let seed = g.reshape_node(seed, vec![c, s, s]);
            let x = g.upsample2x(seed);
            let x = conv1.forward(g, bind, x);
            let x = g.relu(x);
            let x = g.upsample2x(x);
            let x = conv2.forward(g, bind, x);
            planes.push(x);
        }
        [planes[0], planes[1], planes[2]]
    }
}

// ---------------------------------------------------------------------------
// triplane sampling
// ---------------------------------------------------------------------------

/// Which two point coordinates index each plane (column axis, row axis).
const PLANE_AXES: [(usize, usize); 3] = [(1, 2), (0, 2), (0, 1)];

struct TriplaneSampleOp<T> {
    lo: T,
    hi: T,
}

/// Map a coordinate into continuous texel space, reporting whether the border
/// clamp engaged (which kills the positional gradient).
fn to_texel<T: Real>(v: T, lo: T, hi: T, res: usize) -> (T, bool) {
    let max = T::from_usizec(res - 1);
    let t = (v - lo) / (hi - lo) * max;
    if t <= T::zero() {
        (T::zero(), true)
    } else if t >= max {
        (max, true)
    } else {
        (t, false)
    }
}

struct SampleCoords<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: T,
    fy: T,
    clamp_x: bool,
    clamp_y: bool,
}

fn sample_coords<T: Real>(a: T, b: T, lo: T, hi: T, w: usize, h: usize) -> SampleCoords<T> {
    let (tx, clamp_x) = to_texel(a, lo, hi, w);
    let (ty, clamp_y) = to_texel(b, lo, hi, h);
    let x0f = tx.floor();
    let y0f = ty.floor();
    let x0 = x0f.to_f64c() as usize;
    let y0 = y0f.to_f64c() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    SampleCoords { x0, x1, y0, y1, fx: tx - x0f, fy: ty - y0f, clamp_x, clamp_y }
}

impl<T: Real> DiffOp<T> for TriplaneSampleOp<T> {
    fn name(&self) -> &'static str {
        "triplane_sample"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let points = x[3];
        assert_eq!(points.rank(), 2);
        assert_eq!(points.shape()[1], 3, "points must be [N,3]");
        let n = points.shape()[0];
        let c = x[0].shape()[0];
        let one = T::one();
        let mut out = Vec::with_capacity(n * 3 * c);
        for i in 0..n {
            let p = [points.at2(i, 0), points.at2(i, 1), points.at2(i, 2)];
            for (k, &(ax, bx)) in PLANE_AXES.iter().enumerate() {
                let plane = x[k];
                let (h, w) = (plane.shape()[1], plane.shape()[2]);
                let sc = sample_coords(p[ax], p[bx], self.lo, self.hi, w, h);
                let (w00, w01) = ((one - sc.fx) * (one - sc.fy), sc.fx * (one - sc.fy));
                let (w10, w11) = ((one - sc.fx) * sc.fy, sc.fx * sc.fy);
                for ch in 0..c {
                    let v = w00 * plane.at3(ch, sc.y0, sc.x0)
                        + w01 * plane.at3(ch, sc.y0, sc.x1)
                        + w10 * plane.at3(ch, sc.y1, sc.x0)
                        + w11 * plane.at3(ch, sc.y1, sc.x1);
                    out.push(v);
                }
            }
        }
        Tensor::from_vec([n, 3 * c], out)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let points = x[3];
        let n = points.shape()[0];
        let c = x[0].shape()[0];
        let one = T::one();
        let mut g_planes: Vec<Tensor<T>> =
            (0..3).map(|k| Tensor::zeros(x[k].shape().to_vec())).collect();
        let mut g_points = Tensor::zeros([n, 3]);
        {
            let gp = g_points.data_mut();
            for i in 0..n {
                let p = [points.at2(i, 0), points.at2(i, 1), points.at2(i, 2)];
                for (k, &(ax, bx)) in PLANE_AXES.iter().enumerate() {
                    let plane = x[k];
                    let (h, w) = (plane.shape()[1], plane.shape()[2]);
                    let sc = sample_coords(p[ax], p[bx], self.lo, self.hi, w, h);
                    let (w00, w01) = ((one - sc.fx) * (one - sc.fy), sc.fx * (one - sc.fy));
                    let (w10, w11) = ((one - sc.fx) * sc.fy, sc.fx * sc.fy);
                    let scale_x = T::from_usizec(w - 1) / (self.hi - self.lo);
                    let scale_y = T::from_usizec(h - 1) / (self.hi - self.lo);
                    let gpl = g_planes[k].data_mut();
                    let plane_at = |ch: usize, yy: usize, xx: usize| plane.at3(ch, yy, xx);
                    let mut gax = T::zero();
                    let mut gbx = T::zero();
                    for ch in 0..c {
                        let go = g.at2(i, k * c + ch);
                        let base = ch * h * w;
                        gpl[base + sc.y0 * w + sc.x0] += go * w00;
                        gpl[base + sc.y0 * w + sc.x1] += go * w01;
                        gpl[base + sc.y1 * w + sc.x0] += go * w10;
                        gpl[base + sc.y1 * w + sc.x1] += go * w11;
                        // bilinear derivative w.r.t. continuous texel coords
                        let d_fx = (one - sc.fy)
                            * (plane_at(ch, sc.y0, sc.x1) - plane_at(ch, sc.y0, sc.x0))
                            + sc.fy * (plane_at(ch, sc.y1, sc.x1) - plane_at(ch, sc.y1, sc.x0));
                        let d_fy = (one - sc.fx)
                            * (plane_at(ch, sc.y1, sc.x0) - plane_at(ch, sc.y0, sc.x0))
                            + sc.fx * (plane_at(ch, sc.y1, sc.x1) - plane_at(ch, sc.y0, sc.x1));
                        gax += go * d_fx;
                        gbx += go * d_fy;
                    }
                    if !sc.clamp_x {
                        gp[i * 3 + ax] += gax * scale_x;
                    }
                    if !sc.clamp_y {
                        gp[i * 3 + bx] += gbx * scale_y;
                    }
                }
            }
        }
        let mut out: Vec<Option<Tensor<T>>> = g_planes
            .into_iter()
            .enumerate()
            .map(|(k, t)| needs[k].then_some(t))
            .collect();
        out.push(needs[3].then_some(g_points));
        out
    }
}

/// Sample three feature planes at 3D points; output `[N, 3C]`. Differentiable
/// in the planes and in the points (except where the border clamp engages).
pub fn triplane_sample<T: Real>(
    g: &mut Graph<T>,
    planes: [NodeId; 3],
    points: NodeId,
    lo: T,
    hi: T,
) -> NodeId {
    let c = g.shape(planes[0])[0];
    for p in planes {
        assert_eq!(g.shape(p).len(), 3, "planes must be [C,H,W]");
        assert_eq!(g.shape(p)[0], c, "planes must share a channel count");
    }
    let op = TriplaneSampleOp { lo, hi };
    g.apply(Box::new(op), &[planes[0], planes[1], planes[2], points])
}

// ---------------------------------------------------------------------------
// attribute heads
// ---------------------------------------------------------------------------

pub struct AvatarHeads {
    geometry: Mlp,
    appearance: Mlp,
    delta_max: f64,
    scale_min: f64,
}

pub struct HeadOutputs {
    /// [N,3] canonical-space offsets, bounded by tanh·δ_max.
    pub offsets: NodeId,
    /// [N,3] colors in (0,1).
    pub colors: NodeId,
    /// [N,1] Gaussian scales ≥ s_min (meters).
    pub scales: NodeId,
}

impl AvatarHeads {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &TriplaneConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.feature_dim();
        let geometry = Mlp::new(
            store,
            &format!("{prefix}.geo"),
            &[d, cfg.head_hidden, 3],
            crate::nn::Activation::Relu,
            true,
            rng,
        );
        let appearance = Mlp::new(
            store,
            &format!("{prefix}.app"),
            &[d, cfg.head_hidden, 4],
            crate::nn::Activation::Relu,
            true,
            rng,
        );
        Self { geometry, appearance, delta_max: cfg.delta_max, scale_min: cfg.scale_min }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bind: &Binding, feats: NodeId) -> HeadOutputs {
        let raw_geo = self.geometry.forward(g, bind, feats);
        let bounded = g.tanh(raw_geo);
        let offsets = g.mul_scalar(bounded, T::from_f64c(self.delta_max));

        let raw_app = self.appearance.forward(g, bind, feats);
        let rgb = g.slice_last(raw_app, 0, 3);
        let colors = g.sigmoid(rgb);
        let s_raw = g.slice_last(raw_app, 3, 4);
        let s_pos = g.softplus(s_raw);
        let scales = g.add_scalar(s_pos, T::from_f64c(self.scale_min));
        HeadOutputs { offsets, colors, scales }
    }
}

// ---------------------------------------------------------------------------
// full static avatar
// ---------------------------------------------------------------------------

pub struct StaticAvatar {
    pub cfg: TriplaneConfig,
    pub latent: ParamId,
    pub decoder: TriplaneDecoder,
    pub heads: AvatarHeads,
}

impl StaticAvatar {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: TriplaneConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let scale = T::from_f64c(0.1);
        let latent_init = Tensor::from_vec(
            [1, cfg.latent_dim],
            (0..cfg.latent_dim)
                .map(|_| T::from_f64c(rng.gen_range(-1.0..1.0)) * scale)
                .collect::<Vec<T>>(),
        );
        let latent = store.add(format!("{prefix}.latent"), latent_init);
        let decoder = TriplaneDecoder::new(store, &format!("{prefix}.decoder"), &cfg, rng);
        let heads = AvatarHeads::new(store, &format!("{prefix}.heads"), &cfg, rng);
        Ok(Self { cfg, latent, decoder, heads })
    }

    /// Decode planes and evaluate attributes at `points` ([N,3] node).
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        points: NodeId,
    ) -> (HeadOutputs, NodeId) {
        let latent = bind.node(self.latent);
        let planes = self.decoder.decode(g, bind, latent);
        let feats =
            triplane_sample(g, planes, points, T::from_f64c(self.cfg.lo), T::from_f64c(self.cfg.hi));
        (self.heads.forward(g, bind, feats), feats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_fn, CheckConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> TriplaneConfig {
        TriplaneConfig {
            channels: 4,
            resolution: 8,
            latent_dim: 6,
            head_hidden: 8,
            ..TriplaneConfig::default()
        }
    }

    fn random_planes(c: usize, r: usize, seed: u64) -> [Tensor<f64>; 3] {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        [(); 3].map(|_| {
            Tensor::from_vec([c, r, r], (0..c * r * r).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())
        })
    }

    #[test]
    fn config_contract_dims() {
        let cfg = TriplaneConfig::default();
        assert_eq!(cfg.channels, 32);
        assert_eq!(cfg.resolution, 128);
        assert_eq!(cfg.latent_dim, 64);
        assert_eq!(cfg.feature_dim(), 96);
        cfg.validate().unwrap();
        let bad = TriplaneConfig { resolution: 30, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn decoder_produces_plane_shapes() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dec = TriplaneDecoder::new(&mut store, "d", &cfg, &mut rng);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let latent = g.constant(Tensor::from_vec([1, 6], vec![0.1; 6]));
        let planes = dec.decode(&mut g, &bind, latent);
        for p in planes {
            assert_eq!(g.shape(p), [4, 8, 8]);
        }
    }

    #[test]
    fn sampling_is_linear_in_plane_values() {
        let planes = random_planes(3, 8, 2);
        let pts = Tensor::from_vec([2, 3], vec![0.3, -0.2, 0.7, -1.0, 0.5, 0.1]);
        let alpha = 2.75;
        let run = |scale: f64| {
            let mut g = Graph::<f64>::new();
            let ids = [
                g.constant(planes[0].map(|v| v * scale)),
                g.constant(planes[1].map(|v| v * scale)),
                g.constant(planes[2].map(|v| v * scale)),
            ];
            let p = g.constant(pts.clone());
            let s = triplane_sample(&mut g, ids, p, -1.3, 1.3);
            g.value(s).clone()
        };
        let base = run(1.0);
        let scaled = run(alpha);
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert_relative_eq!(a * alpha, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_at_grid_nodes_is_exact() {
        let (lo, hi, r) = (-1.0, 1.0, 5usize);
        let planes = random_planes(2, r, 3);
        // texel (x=3, y=1) corresponds to coords lo + idx·(hi−lo)/(r−1)
        let step = (hi - lo) / (r - 1) as f64;
        let (ax, bx) = (lo + 3.0 * step, lo + step);
        // point whose (y,z) hits that texel on plane 0
        let pts = Tensor::from_vec([1, 3], vec![0.123, ax, bx]);
        let mut g = Graph::<f64>::new();
        let ids = [
            g.constant(planes[0].clone()),
            g.constant(planes[1].clone()),
            g.constant(planes[2].clone()),
        ];
        let p = g.constant(pts);
        let s = triplane_sample(&mut g, ids, p, lo, hi);
        let out = g.value(s);
        for ch in 0..2 {
            assert_relative_eq!(out.at2(0, ch), planes[0].at3(ch, 1, 3), epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_matches_manual_bilinear_oracle() {
        let (lo, hi, r) = (-1.0, 1.0, 4usize);
        let planes = random_planes(1, r, 4);
        let (py, pz) = (0.37, -0.55);
        let pts = Tensor::from_vec([1, 3], vec![0.0, py, pz]);
        let mut g = Graph::<f64>::new();
        let ids = [
            g.constant(planes[0].clone()),
            g.constant(planes[1].clone()),
            g.constant(planes[2].clone()),
        ];
        let p = g.constant(pts);
        let s = triplane_sample(&mut g, ids, p, lo, hi);
        let got = g.value(s).at2(0, 0);

        // independent formula
        let tex = |v: f64| (v - lo) / (hi - lo) * (r - 1) as f64;
        let (tx, ty) = (tex(py), tex(pz));
        let (x0, y0) = (tx.floor() as usize, ty.floor() as usize);
        let (fx, fy) = (tx - x0 as f64, ty - y0 as f64);
        let at = |y: usize, x: usize| planes[0].at3(0, y, x);
        let expect = (1.0 - fx) * (1.0 - fy) * at(y0, x0)
            + fx * (1.0 - fy) * at(y0, x0 + 1)
            + (1.0 - fx) * fy * at(y0 + 1, x0)
            + fx * fy * at(y0 + 1, x0 + 1);
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn constant_planes_sample_constant_with_zero_point_gradient() {
        let c = 3;
        let planes: [Tensor<f64>; 3] = [
            Tensor::filled([c, 6, 6], 0.4),
            Tensor::filled([c, 6, 6], -0.2),
            Tensor::filled([c, 6, 6], 0.9),
        ];
        let mut g = Graph::<f64>::new();
        let ids = [
            g.constant(planes[0].clone()),
            g.constant(planes[1].clone()),
            g.constant(planes[2].clone()),
        ];
        let p = g.param(Tensor::from_vec([2, 3], vec![0.1, 0.2, 0.3, -0.8, 0.0, 1.1]));
        let s = triplane_sample(&mut g, ids, p, -1.3, 1.3);
        let out = g.value(s).clone();
        for i in 0..2 {
            for ch in 0..c {
                assert_relative_eq!(out.at2(i, ch), 0.4, epsilon = 1e-12);
                assert_relative_eq!(out.at2(i, c + ch), -0.2, epsilon = 1e-12);
                assert_relative_eq!(out.at2(i, 2 * c + ch), 0.9, epsilon = 1e-12);
            }
        }
        let loss = g.sum(s);
        let grads = g.backward(loss);
        assert!(grads.get(p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn border_clamp_freezes_out_of_range_points() {
        let planes = random_planes(2, 6, 5);
        let mut g = Graph::<f64>::new();
        let ids = [
            g.constant(planes[0].clone()),
            g.constant(planes[1].clone()),
            g.constant(planes[2].clone()),
        ];
        // far outside the [−1.3, 1.3] cube in every coordinate
        let p = g.param(Tensor::from_vec([1, 3], vec![5.0, -7.0, 9.0]));
        let s = triplane_sample(&mut g, ids, p, -1.3, 1.3);
        let out = g.value(s).clone();
        // samples the corner texel of each plane
        assert_relative_eq!(out.at2(0, 0), planes[0].at3(0, 5, 0), epsilon = 1e-12);
        let loss = g.sum(s);
        let grads = g.backward(loss);
        assert!(grads.get(p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        let planes = random_planes(2, 6, 6);
        let pts = Tensor::from_vec([3, 3], vec![0.31, -0.42, 0.53, -0.91, 0.17, 0.08, 1.05, -1.1, 0.6]);
        let inputs = vec![planes[0].clone(), planes[1].clone(), planes[2].clone(), pts];
        let report = check_fn(
            "triplane_sample",
            &inputs,
            |g, ids| {
                let s = triplane_sample(g, [ids[0], ids[1], ids[2]], ids[3], -1.3, 1.3);
                // weight outputs so coordinates don't cancel
                let n = g.shape(s).iter().product::<usize>();
                let w = g.constant(Tensor::from_vec(
                    g.shape(s).to_vec(),
                    (0..n).map(|i| 0.2 + 0.01 * i as f64).collect::<Vec<f64>>(),
                ));
                let prod = g.mul(s, w);
                g.sum(prod)
            },
            CheckConfig::default(),
        );
        assert!(report.pass(), "{}", report.line());
    }

    #[test]
    fn zero_initialized_heads_hit_documented_values() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let heads = AvatarHeads::new(&mut store, "h", &cfg, &mut rng);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let feats = g.constant(Tensor::from_vec(
            [2, cfg.feature_dim()],
            (0..2 * cfg.feature_dim()).map(|i| 0.3 * i as f64).collect::<Vec<f64>>(),
        ));
        let out = heads.forward(&mut g, &bind, feats);
        assert!(g.value(out.offsets).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.colors).data().iter().all(|&v| v == 0.5));
        let expect = 2.0f64.ln() + cfg.scale_min;
        for &s in g.value(out.scales).data() {
            assert_relative_eq!(s, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn offsets_respect_delta_max_bound() {
        use rand::Rng;
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut heads = AvatarHeads::new(&mut store, "h", &cfg, &mut rng);
        heads.delta_max = cfg.delta_max;
        // blow up the final layer to push tanh toward saturation
        let wid = store.by_name("h.geo.1.w").unwrap();
        let shape = store.get(wid).shape().to_vec();
        let big = Tensor::from_vec(
            shape.clone(),
            (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-30.0..30.0)).collect::<Vec<f64>>(),
        );
        store.set(wid, big);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let feats = g.constant(Tensor::from_vec(
            [4, cfg.feature_dim()],
            (0..4 * cfg.feature_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>(),
        ));
        let out = heads.forward(&mut g, &bind, feats);
        for &v in g.value(out.offsets).data() {
            assert!(v.abs() <= cfg.delta_max + 1e-12, "offset {v} exceeds bound");
        }
        for &s in g.value(out.scales).data() {
            assert!(s >= cfg.scale_min, "scale {s} under floor");
        }
    }

    #[test]
    fn latent_to_feature_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dec = TriplaneDecoder::new(&mut store, "d", &cfg, &mut rng);
        let pts = Tensor::from_vec([2, 3], vec![0.2, -0.3, 0.5, -0.6, 0.9, -0.1]);
        let latent = Tensor::from_vec([1, 6], vec![0.3, -0.2, 0.11, 0.07, -0.4, 0.25]);
        let report = check_fn(
            "latent_to_features",
            &[latent],
            |g, ids| {
                let bind = store.bind(g);
                let planes = dec.decode(g, &bind, ids[0]);
                let p = g.constant(pts.clone());
                let s = triplane_sample(g, planes, p, -1.3, 1.3);
                let n = g.shape(s).iter().product::<usize>();
                let w = g.constant(Tensor::from_vec(
                    g.shape(s).to_vec(),
                    (0..n).map(|i| 0.1 + 0.03 * i as f64).collect::<Vec<f64>>(),
                ));
                let prod = g.mul(s, w);
                g.sum(prod)
            },
            CheckConfig::default(),
        );
        assert!(report.pass(), "{}", report.line());
    }

    #[test]
    fn full_avatar_chain_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let avatar = StaticAvatar::new(&mut store, "av", cfg, &mut rng).unwrap();
        let pts = Tensor::from_vec([2, 3], vec![0.15, -0.25, 0.35, -0.45, 0.55, -0.65]);
        let latent0 = store.get(avatar.latent).clone();
        let report = check_fn(
            "avatar_chain",
            &[latent0],
            |g, ids| {
                let bind = store.bind(g);
                let planes = avatar.decoder.decode(g, &bind, ids[0]);
                let p = g.constant(pts.clone());
                let feats = triplane_sample(
                    g,
                    planes,
                    p,
                    avatar.cfg.lo,
                    avatar.cfg.hi,
                );
                let out = avatar.heads.forward(g, &bind, feats);
                let a = g.sum(out.offsets);
                let b = g.sum(out.colors);
                let c = g.sum(out.scales);
                let ab = g.add(a, b);
                g.add(ab, c)
            },
            CheckConfig::with_tol(1e-3),
        );
        assert!(report.pass(), "{}", report.line());
    }
}
