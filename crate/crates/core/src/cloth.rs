//! Spatio-temporal cloth dynamics.
//!
//! A window of recent poses (span `window_span`, sampled every `window_step`)
//! is encoded per frame as 6D joint-rotation features. Cloth vertices form a
//! graph whose normalized adjacency feeds a two-layer graph convolution; the
//! resulting node embeddings, concatenated with the per-frame pose features,
//! drive a GRU across the window. Each step's hidden state maps through a
//! zero-initialized head to bounded offsets on position, color, and scale, so
//! an untrained model reproduces the static avatar exactly. Offsets at
//! arbitrary playback times come from linear interpolation between step
//! outputs, exact at the endpoints.

use serde::{Deserialize, Serialize};
use rand::Rng;

use crate::body::{axis_angle_to_matrix, Pose, SkinnedMesh};
use crate::error::{Error, Result};
use crate::graph::{CsrMatrix, Graph, NodeId};
use crate::nn::{Activation, Binding, Linear, Mlp, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClothConfig {
    /// Window span T in seconds.
    pub window_span: f64,
    /// Sample spacing Δt in seconds.
    pub window_step: f64,
    /// GCN/GRU width d.
    pub model_dim: usize,
    /// Per-node static input features (canonical position + normal).
    pub node_feat_dim: usize,
    /// Offset bounds: position (m), color, scale (m).
    pub beta_x: f64,
    pub beta_c: f64,
    pub beta_s: f64,
}

impl Default for ClothConfig {
    fn default() -> Self {
        Self {
            window_span: 1.0,
            window_step: 0.2,
            model_dim: 128,
            node_feat_dim: 6,
            beta_x: 0.05,
            beta_c: 0.2,
            beta_s: 0.002,
        }
    }
}

impl ClothConfig {
    /// Number of pose samples per window (K+1 with K = T/Δt).
    pub fn window_samples(&self) -> usize {
        (self.window_span / self.window_step).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_span <= 0.0 || self.window_step <= 0.0 {
            return Err(Error::Config("window span and step must be positive".into()));
        }
        if self.window_span < self.window_step {
            return Err(Error::Config("window span must cover at least one step".into()));
        }
        if self.model_dim == 0 || self.node_feat_dim == 0 {
            return Err(Error::Config("model and node feature dims must be positive".into()));
        }
        if self.beta_x <= 0.0 || self.beta_c <= 0.0 || self.beta_s <= 0.0 {
            return Err(Error::Config("offset bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Pose feature width: 6 numbers per non-root joint.
pub fn pose_feature_dim(num_joints: usize) -> usize {
    (num_joints - 1) * 6
}

// ---------------------------------------------------------------------------
// pose windows
// ---------------------------------------------------------------------------

/// Frame indices nearest to the window sample times
/// t_now − T + k·Δt, k = 0..=K. Fails if the window would extend outside the
/// recorded timestamps.
pub fn build_window<T: Real>(
    timestamps: &[T],
    t_now: T,
    cfg: &ClothConfig,
) -> Result<Vec<usize>> {
    if timestamps.is_empty() {
        return Err(Error::Boundary("no frames to window over".into()));
    }
    let first = timestamps[0].to_f64c();
    let last = timestamps[timestamps.len() - 1].to_f64c();
    let t_now = t_now.to_f64c();
    let samples = cfg.window_samples();
    let tol = cfg.window_step * 0.5;
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let t_k = t_now - cfg.window_span + k as f64 * cfg.window_step;
        if t_k < first - tol || t_k > last + tol {
            return Err(Error::Boundary(format!(
                "window sample at t={t_k:.3}s falls outside recorded frames [{first:.3}, {last:.3}]"
            )));
        }
        // nearest frame; ties resolve to the earlier index
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, ts) in timestamps.iter().enumerate() {
            let d = (ts.to_f64c() - t_k).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// 6D rotation features: the first two columns of each non-root joint's
/// rotation matrix, column-major: (r00, r10, r20, r01, r11, r21).
pub fn encode_pose_features<T: Real>(pose: &Pose<T>) -> Tensor<T> {
    let j = pose.joint_rotations.len();
    assert!(j >= 2, "pose must articulate at least one non-root joint");
    let mut out = Vec::with_capacity((j - 1) * 6);
    for rot in pose.joint_rotations.iter().skip(1) {
        let m = axis_angle_to_matrix(*rot);
        out.extend([m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]);
    }
    Tensor::from_vec([1, (j - 1) * 6], out)
}

// ---------------------------------------------------------------------------
// cloth graph
// ---------------------------------------------------------------------------

pub struct ClothGraph<T: Real> {
    /// Graph node → mesh vertex index.
    pub node_to_vertex: Vec<usize>,
    /// Symmetrically normalized adjacency with self-loops:
    /// Â = D^{−1/2}(A+I)D^{−1/2}.
    pub adjacency: CsrMatrix<T>,
}

/// Symmetric normalization of an undirected edge list with self-loops.
pub fn normalized_adjacency<T: Real>(n: usize, edges: &[(usize, usize)]) -> CsrMatrix<T> {
    let mut deg = vec![1.0f64; n]; // self-loop
    for &(a, b) in edges {
        assert!(a < n && b < n && a != b, "bad edge ({a},{b})");
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let mut triplets = Vec::with_capacity(n + edges.len() * 2);
    for i in 0..n {
        triplets.push((i, i, T::from_f64c(1.0 / deg[i])));
    }
    for &(a, b) in edges {
        let v = T::from_f64c(1.0 / (deg[a] * deg[b]).sqrt());
        triplets.push((a, b, v));
        triplets.push((b, a, v));
    }
    CsrMatrix::from_triplets(n, triplets)
}

/// Extract the cloth subgraph of a mesh: nodes are vertices flagged in
/// `is_cloth`, edges are mesh edges with both endpoints flagged.
pub fn build_cloth_graph<T: Real>(mesh: &SkinnedMesh<T>, is_cloth: &[bool]) -> ClothGraph<T> {
    assert_eq!(is_cloth.len(), mesh.num_vertices());
    let mut vertex_to_node = vec![usize::MAX; mesh.num_vertices()];
    let mut node_to_vertex = Vec::new();
    for (v, &flag) in is_cloth.iter().enumerate() {
        if flag {
            vertex_to_node[v] = node_to_vertex.len();
            node_to_vertex.push(v);
        }
    }
    let mut edges = Vec::new();
    for (a, b) in mesh.edges() {
        if is_cloth[a] && is_cloth[b] {
            edges.push((vertex_to_node[a], vertex_to_node[b]));
        }
    }
    ClothGraph { adjacency: normalized_adjacency(node_to_vertex.len(), &edges), node_to_vertex }
}

// ---------------------------------------------------------------------------
// GCN encoder
// ---------------------------------------------------------------------------

pub struct GcnEncoder {
    l1: Linear,
    l2: Linear,
}

impl GcnEncoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            l1: Linear::new(store, &format!("{prefix}.l1"), in_dim, dim, rng),
            l2: Linear::new(store, &format!("{prefix}.l2"), dim, dim, rng),
        }
    }

    /// H2 = Â·relu(Â·X·W1 + b1)·W2 + b2
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        adj: &CsrMatrix<T>,
        x: NodeId,
    ) -> NodeId {
        let h = g.spmm(adj, x);
        let h = self.l1.forward(g, bind, h);
        let h = g.relu(h);
        let h = g.spmm(adj, h);
        self.l2.forward(g, bind, h)
    }
}

// ---------------------------------------------------------------------------
// GRU
// ---------------------------------------------------------------------------

pub struct GruCell {
    wr: Linear,
    wz: Linear,
    wn: Linear,
    ur: Linear,
    uz: Linear,
    un: Linear,
}

impl GruCell {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            wr: Linear::new(store, &format!("{prefix}.wr"), in_dim, hidden, rng),
            wz: Linear::new(store, &format!("{prefix}.wz"), in_dim, hidden, rng),
            wn: Linear::new(store, &format!("{prefix}.wn"), in_dim, hidden, rng),
            ur: Linear::new(store, &format!("{prefix}.ur"), hidden, hidden, rng),
            uz: Linear::new(store, &format!("{prefix}.uz"), hidden, hidden, rng),
            un: Linear::new(store, &format!("{prefix}.un"), hidden, hidden, rng),
        }
    }

    /// r = σ(W_r x + U_r h), z = σ(W_z x + U_z h),
    /// n = tanh(W_n x + r ⊙ U_n h), h' = (1−z)⊙n + z⊙h
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        x: NodeId,
        h: NodeId,
    ) -> NodeId {
        let r = {
            let a = self.wr.forward(g, bind, x);
            let b = self.ur.forward(g, bind, h);
            let s = g.add(a, b);
            g.sigmoid(s)
        };
        let z = {
            let a = self.wz.forward(g, bind, x);
            let b = self.uz.forward(g, bind, h);
            let s = g.add(a, b);
            g.sigmoid(s)
        };
        let n = {
            let a = self.wn.forward(g, bind, x);
            let b = self.un.forward(g, bind, h);
            let gated = g.mul(r, b);
            let s = g.add(a, gated);
            g.tanh(s)
        };
        let keep = g.mul(z, h);
        let one_minus_z = g.affine(z, -T::one(), T::one());
        let new = g.mul(one_minus_z, n);
        g.add(new, keep)
    }
}

// ---------------------------------------------------------------------------
// dynamics model
// ---------------------------------------------------------------------------

/// Bounded per-node offsets emitted at one window step.
pub struct StepOffsets {
    /// [M,3] position offsets, |·| ≤ β_x.
    pub dx: NodeId,
    /// [M,3] color offsets, |·| ≤ β_c.
    pub dc: NodeId,
    /// [M,1] scale offsets, |·| ≤ β_s.
    pub ds: NodeId,
}

pub struct ClothDynamics {
    pub cfg: ClothConfig,
    gcn: GcnEncoder,
    gru: GruCell,
    head: Mlp,
}

impl ClothDynamics {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: ClothConfig,
        num_joints: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let gcn = GcnEncoder::new(store, &format!("{prefix}.gcn"), cfg.node_feat_dim, d, rng);
        let gru = GruCell::new(
            store,
            &format!("{prefix}.gru"),
            d + pose_feature_dim(num_joints),
            d,
            rng,
        );
        // zero-initialized head: a fresh model emits exactly zero offsets
        let head = Mlp::new(store, &format!("{prefix}.head"), &[d, d, 7], Activation::Relu, true, rng);
        Ok(Self { cfg, gcn, gru, head })
    }

    /// Roll the GRU over a window of pose features (`[1,F]` nodes, oldest
    /// first) and emit bounded offsets at every step.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        bind: &Binding,
        adj: &CsrMatrix<T>,
        node_feats: NodeId,
        pose_feats: &[NodeId],
    ) -> Vec<StepOffsets> {
        let m = g.shape(node_feats)[0];
        let emb = self.gcn.forward(g, bind, adj, node_feats);
        let mut h = g.constant(Tensor::zeros([m, self.cfg.model_dim]));
        let broadcast_idx = vec![0usize; m];
        let mut steps = Vec::with_capacity(pose_feats.len());
        for &pf in pose_feats {
            let pose_rows = g.gather_rows(pf, &broadcast_idx);
            let x = g.concat_last(&[emb, pose_rows]);
            h = self.gru.step(g, bind, x, h);
            let raw = self.head.forward(g, bind, h);
            let dx = {
                let s = g.slice_last(raw, 0, 3);
                let t = g.tanh(s);
                g.mul_scalar(t, T::from_f64c(self.cfg.beta_x))
            };
            let dc = {
                let s = g.slice_last(raw, 3, 6);
                let t = g.tanh(s);
                g.mul_scalar(t, T::from_f64c(self.cfg.beta_c))
            };
            let ds = {
                let s = g.slice_last(raw, 6, 7);
                let t = g.tanh(s);
                g.mul_scalar(t, T::from_f64c(self.cfg.beta_s))
            };
            steps.push(StepOffsets { dx, dc, ds });
        }
        steps
    }
}

/// Linear interpolation (1−α)·a + α·b between step outputs. Exact at the
/// endpoints: α = 0 returns a's values bitwise, α = 1 returns b's.
pub fn interpolate_offsets<T: Real>(g: &mut Graph<T>, a: NodeId, b: NodeId, alpha: T) -> NodeId {
    assert!(
        alpha >= T::zero() && alpha <= T::one(),
        "interpolation weight must lie in [0,1]"
    );
    let wa = g.mul_scalar(a, T::one() - alpha);
    let wb = g.mul_scalar(b, alpha);
    g.add(wa, wb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_fn, CheckConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ClothConfig {
        ClothConfig { model_dim: 4, node_feat_dim: 2, ..ClothConfig::default() }
    }

    fn chain_graph(n: usize) -> CsrMatrix<f64> {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        normalized_adjacency(n, &edges)
    }

    #[test]
    fn window_indices_match_thirty_fps_example() {
        let cfg = ClothConfig::default();
        let ts: Vec<f64> = (0..45).map(|i| i as f64 / 30.0).collect();
        let idx = build_window(&ts, 1.2, &cfg).unwrap();
        assert_eq!(idx, vec![6, 12, 18, 24, 30, 36]);
        assert_eq!(cfg.window_samples(), 6);
    }

    #[test]
    fn window_before_first_frame_is_boundary_error() {
        let cfg = ClothConfig::default();
        let ts: Vec<f64> = (0..45).map(|i| i as f64 / 30.0).collect();
        match build_window(&ts, 0.5, &cfg) {
            Err(Error::Boundary(_)) => {}
            other => panic!("expected boundary error, got {other:?}"),
        }
    }

    #[test]
    fn window_snaps_to_nearest_frames() {
        let cfg = ClothConfig::default();
        // 10 FPS: samples at 0.2s spacing land exactly every 2 frames
        let ts: Vec<f64> = (0..25).map(|i| i as f64 / 10.0).collect();
        let idx = build_window(&ts, 1.03, &cfg).unwrap();
        // samples 0.03, 0.23, …, 1.03 → nearest frames 0, 2, 4, 6, 8, 10
        assert_eq!(idx, vec![0, 2, 4, 6, 8, 10]);
    }

    #[test]
    fn pose_feature_dim_contract() {
        assert_eq!(pose_feature_dim(22), 126);
    }

    #[test]
    fn identity_pose_features_are_canonical_six_d() {
        let pose = Pose::<f64>::rest(22, 0.0);
        let f = encode_pose_features(&pose);
        assert_eq!(f.shape(), [1, 126]);
        for block in f.data().chunks(6) {
            assert_eq!(block, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn pose_features_are_local_to_the_rotated_joint() {
        let mut pose = Pose::<f64>::rest(22, 0.0);
        pose.joint_rotations[5] = [0.0, 0.0, 0.9];
        let base = encode_pose_features(&Pose::<f64>::rest(22, 0.0));
        let moved = encode_pose_features(&pose);
        for j in 1..22 {
            let b = &base.data()[(j - 1) * 6..j * 6];
            let m = &moved.data()[(j - 1) * 6..j * 6];
            if j == 5 {
                assert_ne!(b, m);
            } else {
                assert_eq!(b, m);
            }
        }
        // root rotation is deliberately excluded
        let mut rooted = Pose::<f64>::rest(22, 0.0);
        rooted.joint_rotations[0] = [0.3, 0.0, 0.0];
        assert_eq!(encode_pose_features(&rooted).data(), base.data());
    }

    #[test]
    fn gcn_matches_dense_oracle() {
        let n = 4;
        let edges = [(0usize, 1usize), (1, 2), (2, 3), (3, 0)];
        let adj = normalized_adjacency::<f64>(n, &edges);
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = GcnEncoder::new(&mut store, "g", 3, 5, &mut rng);
        let x = Tensor::from_vec([n, 3], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect::<Vec<f64>>());

        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let xn = g.constant(x.clone());
        let out = enc.forward(&mut g, &bind, &adj, xn);
        let got = g.value(out).clone();

        // dense oracle
        let mut deg = vec![1.0f64; n];
        for &(a, b) in &edges {
            deg[a] += 1.0;
            deg[b] += 1.0;
        }
        let mut ad = vec![vec![0.0; n]; n];
        for i in 0..n {
            ad[i][i] = 1.0 / deg[i];
        }
        for &(a, b) in &edges {
            let v = 1.0 / (deg[a] * deg[b]).sqrt();
            ad[a][b] = v;
            ad[b][a] = v;
        }
        let w1 = store.get(store.by_name("g.l1.w").unwrap()).clone();
        let b1 = store.get(store.by_name("g.l1.b").unwrap()).clone();
        let w2 = store.get(store.by_name("g.l2.w").unwrap()).clone();
        let b2 = store.get(store.by_name("g.l2.b").unwrap()).clone();
        let matmul = |a: &Vec<Vec<f64>>, x: &Tensor<f64>| -> Vec<Vec<f64>> {
            let cols = x.shape()[1];
            (0..n)
                .map(|i| {
                    (0..cols)
                        .map(|c| (0..n).map(|k| a[i][k] * x.at2(k, c)).sum())
                        .collect()
                })
                .collect()
        };
        let ax = matmul(&ad, &x);
        let mut h1 = vec![vec![0.0; 5]; n];
        for i in 0..n {
            for c in 0..5 {
                let mut s = b1.data()[c];
                for k in 0..3 {
                    s += ax[i][k] * w1.at2(k, c);
                }
                h1[i][c] = s.max(0.0);
            }
        }
        let h1t = Tensor::from_vec([n, 5], h1.iter().flatten().copied().collect::<Vec<f64>>());
        let ah = matmul(&ad, &h1t);
        for i in 0..n {
            for c in 0..5 {
                let mut s = b2.data()[c];
                for k in 0..5 {
                    s += ah[i][k] * w2.at2(k, c);
                }
                assert_relative_eq!(got.at2(i, c), s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let n = 5;
        let edges = [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)];
        let perm = [2usize, 0, 4, 1, 3]; // node i → perm[i]
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = GcnEncoder::new(&mut store, "g", 2, 3, &mut rng);
        let x = Tensor::from_vec([n, 2], (0..10).map(|i| (i as f64).sin()).collect::<Vec<f64>>());

        let run = |edges: &[(usize, usize)], x: &Tensor<f64>| {
            let adj = normalized_adjacency::<f64>(n, edges);
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let xn = g.constant(x.clone());
            let out = enc.forward(&mut g, &bind, &adj, xn);
            g.value(out).clone()
        };
        let base = run(&edges, &x);

        let edges_p: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut xp = vec![0.0; n * 2];
        for i in 0..n {
            for c in 0..2 {
                xp[perm[i] * 2 + c] = x.at2(i, c);
            }
        }
        let permuted = run(&edges_p, &Tensor::from_vec([n, 2], xp));
        for i in 0..n {
            for c in 0..3 {
                assert_relative_eq!(permuted.at2(perm[i], c), base.at2(i, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gru_scalar_recurrence_matches_hand_computation() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell = GruCell::new(&mut store, "c", 1, 1, &mut rng);
        // pin every weight to hand-picked values
        let set = |store: &mut ParamStore<f64>, name: &str, v: f64| {
            let id = store.by_name(name).unwrap();
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::filled(shape, v));
        };
        set(&mut store, "c.wr.w", 0.5);
        set(&mut store, "c.wr.b", 0.1);
        set(&mut store, "c.ur.w", -0.3);
        set(&mut store, "c.ur.b", 0.0);
        set(&mut store, "c.wz.w", 0.2);
        set(&mut store, "c.wz.b", -0.1);
        set(&mut store, "c.uz.w", 0.4);
        set(&mut store, "c.uz.b", 0.0);
        set(&mut store, "c.wn.w", 0.7);
        set(&mut store, "c.wn.b", 0.05);
        set(&mut store, "c.un.w", 0.6);
        set(&mut store, "c.un.b", 0.0);

        let xs = [0.8, -0.4, 0.3];
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let mut h = g.constant(Tensor::zeros([1, 1]));
        for &x in &xs {
            let xn = g.constant(Tensor::from_vec([1, 1], vec![x]));
            h = cell.step(&mut g, &bind, xn, h);
        }
        let got = g.value(h).data()[0];

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hh = 0.0f64;
        for &x in &xs {
            let r = sig(0.5 * x + 0.1 - 0.3 * hh);
            let z = sig(0.2 * x - 0.1 + 0.4 * hh);
            let n = (0.7 * x + 0.05 + r * (0.6 * hh)).tanh();
            hh = (1.0 - z) * n + z * hh;
        }
        assert_relative_eq!(got, hh, epsilon = 1e-12);
    }

    #[test]
    fn fresh_model_emits_exactly_zero_offsets() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = ClothDynamics::new(&mut store, "cd", cfg, 22, &mut rng).unwrap();
        let adj = chain_graph(3);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let feats = g.constant(Tensor::from_vec([3, 2], vec![0.3; 6]));
        let pose = encode_pose_features(&Pose::<f64>::rest(22, 0.0));
        let pf: Vec<NodeId> = (0..6).map(|_| g.constant(pose.clone())).collect();
        let steps = model.forward(&mut g, &bind, &adj, feats, &pf);
        assert_eq!(steps.len(), 6);
        for s in &steps {
            assert!(g.value(s.dx).data().iter().all(|&v| v == 0.0));
            assert!(g.value(s.dc).data().iter().all(|&v| v == 0.0));
            assert!(g.value(s.ds).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rollout_is_causal_bitwise() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = ClothDynamics::new(&mut store, "cd", cfg, 22, &mut rng).unwrap();
        // non-trivial head so outputs respond to inputs
        let hid = store.by_name("cd.head.1.w").unwrap();
        let shape = store.get(hid).shape().to_vec();
        let w = Tensor::from_vec(
            shape.clone(),
            (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-0.5..0.5)).collect::<Vec<f64>>(),
        );
        store.set(hid, w);

        let adj = chain_graph(3);
        let run = |last_rot: f64| -> Vec<Vec<f64>> {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let feats = g.constant(Tensor::from_vec([3, 2], vec![0.1, 0.7, -0.2, 0.4, 0.9, -0.6]));
            let mut poses: Vec<Pose<f64>> = (0..6)
                .map(|k| {
                    let mut p = Pose::rest(22, k as f64 * 0.2);
                    p.joint_rotations[3] = [0.0, 0.1 * k as f64, 0.0];
                    p
                })
                .collect();
            poses[5].joint_rotations[7] = [last_rot, 0.0, 0.0];
            let pf: Vec<NodeId> =
                poses.iter().map(|p| g.constant(encode_pose_features(p))).collect();
            let steps = model.forward(&mut g, &bind, &adj, feats, &pf);
            steps.iter().map(|s| g.value(s.dx).data().to_vec()).collect()
        };
        let a = run(0.0);
        let b = run(1.1);
        for k in 0..5 {
            assert_eq!(a[k], b[k], "step {k} must not see the future");
        }
        assert_ne!(a[5], b[5], "final step must react to its own input");
    }

    #[test]
    fn offsets_respect_bounds_under_extreme_weights() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = ClothDynamics::new(&mut store, "cd", cfg.clone(), 22, &mut rng).unwrap();
        for name in ["cd.head.0.w", "cd.head.1.w", "cd.head.1.b"] {
            let id = store.by_name(name).unwrap();
            let shape = store.get(id).shape().to_vec();
            let big = Tensor::from_vec(
                shape.clone(),
                (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-50.0..50.0)).collect::<Vec<f64>>(),
            );
            store.set(id, big);
        }
        let adj = chain_graph(4);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let feats = g.constant(Tensor::from_vec([4, 2], (0..8).map(|i| i as f64).collect::<Vec<f64>>()));
        let pose = encode_pose_features(&Pose::<f64>::rest(22, 0.0));
        let pf: Vec<NodeId> = (0..6).map(|_| g.constant(pose.clone())).collect();
        let steps = model.forward(&mut g, &bind, &adj, feats, &pf);
        for s in &steps {
            assert!(g.value(s.dx).data().iter().all(|&v| v.abs() <= cfg.beta_x + 1e-12));
            assert!(g.value(s.dc).data().iter().all(|&v| v.abs() <= cfg.beta_c + 1e-12));
            assert!(g.value(s.ds).data().iter().all(|&v| v.abs() <= cfg.beta_s + 1e-12));
        }
    }

    #[test]
    fn interpolation_endpoints_are_bitwise_exact() {
        let a = Tensor::from_vec([2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let b = Tensor::from_vec([2, 3], vec![-0.7, 0.9, 0.0, 0.13, -0.5, 1.0]);
        let mut g = Graph::<f64>::new();
        let an = g.constant(a.clone());
        let bn = g.constant(b.clone());
        let at_zero = interpolate_offsets(&mut g, an, bn, 0.0);
        let at_one = interpolate_offsets(&mut g, an, bn, 1.0);
        assert_eq!(g.value(at_zero).data(), a.data());
        assert_eq!(g.value(at_one).data(), b.data());
    }

    #[test]
    fn interpolation_weights_are_complementary() {
        let a = Tensor::from_vec([1, 4], vec![0.3, -0.8, 0.05, 2.0]);
        let b = Tensor::from_vec([1, 4], vec![1.1, 0.4, -0.9, -0.3]);
        let mut g = Graph::<f64>::new();
        let an = g.constant(a.clone());
        let bn = g.constant(b.clone());
        for alpha in [0.15, 0.4, 0.73] {
            let lo = interpolate_offsets(&mut g, an, bn, alpha);
            let hi = interpolate_offsets(&mut g, an, bn, 1.0 - alpha);
            for i in 0..4 {
                let sum = g.value(lo).data()[i] + g.value(hi).data()[i];
                assert_relative_eq!(sum, a.data()[i] + b.data()[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rollout_gradients_match_finite_differences() {
        let cfg = ClothConfig {
            model_dim: 3,
            node_feat_dim: 2,
            window_span: 0.4,
            ..ClothConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ClothDynamics::new(&mut store, "cd", cfg, 4, &mut rng).unwrap();
        // non-zero head so gradients flow
        for name in ["cd.head.1.w", "cd.head.1.b"] {
            let id = store.by_name(name).unwrap();
            let shape = store.get(id).shape().to_vec();
            let w = Tensor::from_vec(
                shape.clone(),
                (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-0.4..0.4)).collect::<Vec<f64>>(),
            );
            store.set(id, w);
        }
        let adj = chain_graph(3);
        let feats = Tensor::from_vec([3, 2], vec![0.2, -0.1, 0.5, 0.3, -0.4, 0.6]);
        let pose_a = Tensor::from_vec([1, 18], (0..18).map(|i| 0.1 * i as f64 - 0.9).collect::<Vec<f64>>());
        let pose_b = Tensor::from_vec([1, 18], (0..18).map(|i| 0.7 - 0.07 * i as f64).collect::<Vec<f64>>());
        let pose_c = Tensor::from_vec([1, 18], (0..18).map(|i| (i as f64 * 0.31).sin()).collect::<Vec<f64>>());

        let report = check_fn(
            "cloth_rollout",
            &[feats, pose_a, pose_b, pose_c],
            |g, ids| {
                let bind = store.bind(g);
                let steps = model.forward(g, &bind, &adj, ids[0], &[ids[1], ids[2], ids[3]]);
                let mut total: Option<NodeId> = None;
                for s in &steps {
                    for part in [s.dx, s.dc, s.ds] {
                        let sum = g.sum(part);
                        total = Some(match total {
                            None => sum,
                            Some(t) => g.add(t, sum),
                        });
                    }
                }
                total.unwrap()
            },
            CheckConfig::default(),
        );
        assert!(report.pass(), "{}", report.line());
    }
}
