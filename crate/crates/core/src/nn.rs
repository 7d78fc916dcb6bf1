//! Trainable-parameter bookkeeping: a named, stably-ordered parameter store,
//! small layer builders, and the adaptive-moment optimizer.
//!
//! Parameters live outside any graph. Each optimization step binds the whole
//! store into a fresh tape ([`ParamStore::bind`]), builds the loss, runs
//! backward, and hands the gradients to [`Adam::step`]. The store's insertion
//! order is the canonical order for binding, updates, and checkpoints, which
//! keeps every run bitwise reproducible.

use rand::Rng;

use crate::graph::{Gradients, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to one parameter tensor in a [`ParamStore`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

pub struct ParamStore<T: Real> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        assert_eq!(self.values[id.0].shape(), value.shape(), "parameter shape change");
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Push every parameter into the graph (in store order) as a
    /// gradient-requiring leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Binding {
        Binding { ids: self.values.iter().map(|t| g.param(t.clone())).collect() }
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Maps [`ParamId`]s to the graph nodes of one binding pass.
pub struct Binding {
    ids: Vec<NodeId>,
}

impl Binding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.ids[id.0]
    }
}

/// Uniform Glorot-style init in ±sqrt(6/(fan_in+fan_out)).
pub fn xavier_uniform<T: Real>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor<T> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..n).map(|_| T::from_f64c(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Fully connected layer: y = x·W + b with W[in, out].
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), xavier_uniform([fan_in, fan_out], fan_in, fan_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// Layer whose weights and bias start at exactly zero (identity-at-init
    /// heads).
    pub fn new_zeroed<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros([fan_in, fan_out]));
        let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bind: &Binding, x: NodeId) -> NodeId {
        let y = g.matmul(x, bind.node(self.w));
        g.add_bias(y, bind.node(self.b))
    }
}

/// Small fully connected stack with a fixed activation between layers and a
/// linear final layer.
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` = [in, hidden..., out]. `zero_final` zeroes the last layer so
    /// the head's initial output is exactly its post-activation constant.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        activation: Activation,
        zero_final: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least [in, out]");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let lname = format!("{name}.{i}");
            let last = i == dims.len() - 2;
            let layer = if last && zero_final {
                Linear::new_zeroed(store, &lname, dims[i], dims[i + 1])
            } else {
                Linear::new(store, &lname, dims[i], dims[i + 1], rng)
            };
            layers.push(layer);
        }
        Self { layers, activation }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bind: &Binding, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, bind, h);
            if i + 1 < self.layers.len() {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        h
    }
}

/// 3x3 same-padding convolution layer over [C,H,W].
pub struct Conv3x3Layer {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv3x3Layer {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * 9;
        let fan_out = cout * 9;
        let w = store.add(format!("{name}.w"), xavier_uniform([cout, cin, 3, 3], fan_in, fan_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([cout]));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bind: &Binding, x: NodeId) -> NodeId {
        g.conv3x3(x, bind.node(self.w), bind.node(self.b))
    }
}

/// Adaptive-moment optimizer (first/second moment estimates with bias
/// correction). Moments are part of the checkpoint, so training resumes
/// exactly.
pub struct Adam<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::from_f64c(0.9),
            beta2: T::from_f64c(0.999),
            eps: T::from_f64c(1e-8),
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update over every parameter in the store. Parameters whose
    /// gradient is absent are treated as zero-gradient (their moments still
    /// decay, matching the reference formulation).
    pub fn step(&mut self, store: &mut ParamStore<T>, bind: &Binding, grads: &Gradients<T>) {
        if self.m.is_empty() {
            self.m = (0..store.len()).map(|i| Tensor::zeros(store.get(ParamId(i)).shape().to_vec())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), store.len(), "optimizer/store size mismatch");
        self.t += 1;
        let t_f = T::from_f64c(self.t as f64);
        let one = T::one();
        let bc1 = one - self.beta1.powf(t_f);
        let bc2 = one - self.beta2.powf(t_f);

        for i in 0..store.len() {
            let id = ParamId(i);
            let grad = grads.get_or_zero(bind.node(id), store.get(id).shape());
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut value = store.get(id).clone();
            let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
            let md = m.data_mut();
            let vd = v.data_mut();
            let pd = value.data_mut();
            for ((p, (mi, vi)), &gi) in pd.iter_mut().zip(md.iter_mut().zip(vd.iter_mut())).zip(grad.data()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            store.set(id, value);
        }
    }

    /// Raw optimizer state for checkpointing: (first moments, second moments,
    /// step count), in store order.
    pub fn state(&self) -> (&[Tensor<T>], &[Tensor<T>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore(&mut self, m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, t: u64) {
        assert_eq!(m.len(), v.len());
        self.m = m;
        self.v = v;
        self.t = t;
    }
}
