//! Elementwise, scalar, unary, and last-dim-broadcast operations.

use super::{DiffOp, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// elementwise binary (same shape)
// ---------------------------------------------------------------------------

#[derive(Copy, Clone)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary {
    kind: BinKind,
}

impl<T: Real> DiffOp<T> for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
            BinKind::Div => "div",
        }
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (a, b) = (x[0], x[1]);
        match self.kind {
            BinKind::Add => a.zip_map(b, |p, q| p + q),
            BinKind::Sub => a.zip_map(b, |p, q| p - q),
            BinKind::Mul => a.zip_map(b, |p, q| p * q),
            BinKind::Div => a.zip_map(b, |p, q| p / q),
        }
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (x[0], x[1]);
        let ga = needs[0].then(|| match self.kind {
            BinKind::Add | BinKind::Sub => g.clone(),
            BinKind::Mul => g.zip_map(b, |gi, bi| gi * bi),
            BinKind::Div => g.zip_map(b, |gi, bi| gi / bi),
        });
        let gb = needs[1].then(|| match self.kind {
            BinKind::Add => g.clone(),
            BinKind::Sub => g.map(|gi| -gi),
            BinKind::Mul => g.zip_map(a, |gi, ai| gi * ai),
            BinKind::Div => {
                // d(a/b)/db = -a/b^2
                let mut out = g.clone();
                let dst = out.data_mut();
                for ((d, &ai), &bi) in dst.iter_mut().zip(a.data()).zip(b.data()) {
                    *d = -*d * ai / (bi * bi);
                }
                out
            }
        });
        vec![ga, gb]
    }
}

// ---------------------------------------------------------------------------
// scalar affine: x * mul + add
// ---------------------------------------------------------------------------

struct ScalarAffine<T> {
    mul: T,
    add: T,
}

impl<T: Real> DiffOp<T> for ScalarAffine<T> {
    fn name(&self) -> &'static str {
        "scalar_affine"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (m, a) = (self.mul, self.add);
        x[0].map(|v| v * m + a)
    }

    fn backward(
        &self,
        _x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let m = self.mul;
        vec![Some(g.map(|gi| gi * m))]
    }
}

// ---------------------------------------------------------------------------
// unary
// ---------------------------------------------------------------------------

#[derive(Copy, Clone)]
enum UnKind<T> {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Softplus,
    Relu,
    Abs,
    /// min(x, c): gradient 0 where the clamp is active.
    ClampMax(T),
    /// max(x, c): gradient 0 where the clamp is active.
    ClampMin(T),
}

struct Unary<T> {
    kind: UnKind<T>,
}

fn sigmoid<T: Real>(v: T) -> T {
    // Split by sign for stability at |v| large.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(v: T) -> T {
    // log(1+e^v) = max(v,0) + log(1+e^{-|v|})
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

impl<T: Real> DiffOp<T> for Unary<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            UnKind::Neg => "neg",
            UnKind::Exp => "exp",
            UnKind::Ln => "ln",
            UnKind::Sqrt => "sqrt",
            UnKind::Tanh => "tanh",
            UnKind::Sigmoid => "sigmoid",
            UnKind::Softplus => "softplus",
            UnKind::Relu => "relu",
            UnKind::Abs => "abs",
            UnKind::ClampMax(_) => "clamp_max",
            UnKind::ClampMin(_) => "clamp_min",
        }
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        match self.kind {
            UnKind::Neg => x.map(|v| -v),
            UnKind::Exp => x.map(|v| v.exp()),
            UnKind::Ln => x.map(|v| v.ln()),
            UnKind::Sqrt => x.map(|v| v.sqrt()),
            UnKind::Tanh => x.map(|v| v.tanh()),
            UnKind::Sigmoid => x.map(sigmoid),
            UnKind::Softplus => x.map(softplus),
            UnKind::Relu => x.map(|v| v.max(T::zero())),
            UnKind::Abs => x.map(|v| v.abs()),
            UnKind::ClampMax(c) => x.map(|v| v.min(c)),
            UnKind::ClampMin(c) => x.map(|v| v.max(c)),
        }
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = x[0];
        let one = T::one();
        let gx = match self.kind {
            UnKind::Neg => g.map(|gi| -gi),
            UnKind::Exp => g.zip_map(out, |gi, oi| gi * oi),
            UnKind::Ln => g.zip_map(x, |gi, xi| gi / xi),
            UnKind::Sqrt => g.zip_map(out, |gi, oi| gi * T::from_f64c(0.5) / oi),
            UnKind::Tanh => g.zip_map(out, |gi, oi| gi * (one - oi * oi)),
            UnKind::Sigmoid => g.zip_map(out, |gi, oi| gi * oi * (one - oi)),
            UnKind::Softplus => g.zip_map(x, |gi, xi| gi * sigmoid(xi)),
            UnKind::Relu => g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { T::zero() }),
            UnKind::Abs => g.zip_map(x, |gi, xi| {
                if xi > T::zero() {
                    gi
                } else if xi < T::zero() {
                    -gi
                } else {
                    T::zero()
                }
            }),
            UnKind::ClampMax(c) => g.zip_map(x, |gi, xi| if xi < c { gi } else { T::zero() }),
            UnKind::ClampMin(c) => g.zip_map(x, |gi, xi| if xi > c { gi } else { T::zero() }),
        };
        vec![Some(gx)]
    }
}

// ---------------------------------------------------------------------------
// last-dim broadcast binary: a[..., C] (op) b[..., 1]
// ---------------------------------------------------------------------------

#[derive(Copy, Clone)]
enum BcastKind {
    Add,
    Mul,
}

struct BcastLast {
    kind: BcastKind,
}

fn bcast_shapes(a: &[usize], b: &[usize]) {
    assert!(!a.is_empty() && a.len() == b.len(), "broadcast rank mismatch {a:?} vs {b:?}");
    assert_eq!(*b.last().unwrap(), 1, "broadcast rhs last dim must be 1, got {b:?}");
    assert_eq!(&a[..a.len() - 1], &b[..b.len() - 1], "broadcast leading dims {a:?} vs {b:?}");
}

impl<T: Real> DiffOp<T> for BcastLast {
    fn name(&self) -> &'static str {
        match self.kind {
            BcastKind::Add => "add_bcast_last",
            BcastKind::Mul => "mul_bcast_last",
        }
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (a, b) = (x[0], x[1]);
        bcast_shapes(a.shape(), b.shape());
        let c = *a.shape().last().unwrap();
        let mut out = a.clone();
        let dst = out.data_mut();
        for (row, &bv) in dst.chunks_mut(c).zip(b.data()) {
            for v in row {
                match self.kind {
                    BcastKind::Add => *v += bv,
                    BcastKind::Mul => *v *= bv,
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (x[0], x[1]);
        let c = *a.shape().last().unwrap();
        let ga = needs[0].then(|| match self.kind {
            BcastKind::Add => g.clone(),
            BcastKind::Mul => {
                let mut out = g.clone();
                let dst = out.data_mut();
                for (row, &bv) in dst.chunks_mut(c).zip(b.data()) {
                    for v in row {
                        *v *= bv;
                    }
                }
                out
            }
        });
        let gb = needs[1].then(|| {
            let mut out = Tensor::zeros(b.shape().to_vec());
            let dst = out.data_mut();
            match self.kind {
                BcastKind::Add => {
                    for (row, d) in g.data().chunks(c).zip(dst.iter_mut()) {
                        *d = row.iter().copied().sum();
                    }
                }
                BcastKind::Mul => {
                    for ((grow, arow), d) in g.data().chunks(c).zip(a.data().chunks(c)).zip(dst.iter_mut()) {
                        *d = grow.iter().zip(arow).map(|(&gi, &ai)| gi * ai).sum();
                    }
                }
            }
            out
        });
        vec![ga, gb]
    }
}

// ---------------------------------------------------------------------------
// guarded division: num[..., C] / den[..., 1] where den > eps, else 0
// ---------------------------------------------------------------------------

struct SafeDivBcast<T> {
    eps: T,
}

impl<T: Real> DiffOp<T> for SafeDivBcast<T> {
    fn name(&self) -> &'static str {
        "safe_div_bcast"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (num, den) = (x[0], x[1]);
        bcast_shapes(num.shape(), den.shape());
        let c = *num.shape().last().unwrap();
        let mut out = num.clone();
        let dst = out.data_mut();
        for (row, &d) in dst.chunks_mut(c).zip(den.data()) {
            for v in row {
                *v = if d > self.eps { *v / d } else { T::zero() };
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (num, den) = (x[0], x[1]);
        let c = *num.shape().last().unwrap();
        let gn = needs[0].then(|| {
            let mut out = g.clone();
            let dst = out.data_mut();
            for (row, &d) in dst.chunks_mut(c).zip(den.data()) {
                for v in row {
                    *v = if d > self.eps { *v / d } else { T::zero() };
                }
            }
            out
        });
        let gd = needs[1].then(|| {
            let mut out = Tensor::zeros(den.shape().to_vec());
            let dst = out.data_mut();
            for (((grow, nrow), &d), o) in
                g.data().chunks(c).zip(num.data().chunks(c)).zip(den.data()).zip(dst.iter_mut())
            {
                if d > self.eps {
                    let s: T = grow.iter().zip(nrow).map(|(&gi, &ni)| gi * ni).sum();
                    *o = -s / (d * d);
                }
            }
            out
        });
        vec![gn, gd]
    }
}

// ---------------------------------------------------------------------------
// reshape (free: same data, new view)
// ---------------------------------------------------------------------------

struct Reshape {
    shape: Vec<usize>,
}

impl<T: Real> DiffOp<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        x[0].reshape(self.shape.clone())
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reshape(x[0].shape().to_vec()))]
    }
}

// ---------------------------------------------------------------------------
// graph surface
// ---------------------------------------------------------------------------

macro_rules! binary_method {
    ($name:ident, $kind:expr) => {
        pub fn $name(&mut self, a: NodeId, b: NodeId) -> NodeId {
            assert_eq!(self.shape(a), self.shape(b), concat!(stringify!($name), " shape mismatch"));
            self.apply(Box::new(Binary { kind: $kind }), &[a, b])
        }
    };
}

macro_rules! unary_method {
    ($name:ident, $kind:expr) => {
        pub fn $name(&mut self, x: NodeId) -> NodeId {
            self.apply(Box::new(Unary { kind: $kind }), &[x])
        }
    };
}

impl<T: Real> Graph<T> {
    binary_method!(add, BinKind::Add);
    binary_method!(sub, BinKind::Sub);
    binary_method!(mul, BinKind::Mul);
    binary_method!(div, BinKind::Div);

    unary_method!(neg, UnKind::Neg);
    unary_method!(exp, UnKind::Exp);
    unary_method!(ln, UnKind::Ln);
    unary_method!(sqrt, UnKind::Sqrt);
    unary_method!(tanh, UnKind::Tanh);
    unary_method!(sigmoid, UnKind::Sigmoid);
    unary_method!(softplus, UnKind::Softplus);
    unary_method!(relu, UnKind::Relu);
    unary_method!(abs, UnKind::Abs);

    pub fn clamp_max(&mut self, x: NodeId, c: T) -> NodeId {
        self.apply(Box::new(Unary { kind: UnKind::ClampMax(c) }), &[x])
    }

    pub fn clamp_min(&mut self, x: NodeId, c: T) -> NodeId {
        self.apply(Box::new(Unary { kind: UnKind::ClampMin(c) }), &[x])
    }

    pub fn mul_scalar(&mut self, x: NodeId, m: T) -> NodeId {
        self.apply(Box::new(ScalarAffine { mul: m, add: T::zero() }), &[x])
    }

    pub fn add_scalar(&mut self, x: NodeId, a: T) -> NodeId {
        self.apply(Box::new(ScalarAffine { mul: T::one(), add: a }), &[x])
    }

    /// x * mul + add in one node.
    pub fn affine(&mut self, x: NodeId, mul: T, add: T) -> NodeId {
        self.apply(Box::new(ScalarAffine { mul, add }), &[x])
    }

    /// a[..., C] + b[..., 1], broadcasting b across the last dim.
    pub fn add_bcast_last(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Box::new(BcastLast { kind: BcastKind::Add }), &[a, b])
    }

    /// a[..., C] * b[..., 1], broadcasting b across the last dim.
    pub fn mul_bcast_last(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Box::new(BcastLast { kind: BcastKind::Mul }), &[a, b])
    }

    /// num[..., C] / den[..., 1] where den > eps, zero elsewhere.
    pub fn safe_div_bcast(&mut self, num: NodeId, den: NodeId, eps: T) -> NodeId {
        self.apply(Box::new(SafeDivBcast { eps }), &[num, den])
    }

    pub fn reshape_node(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> NodeId {
        self.apply(Box::new(Reshape { shape: shape.into() }), &[x])
    }

    /// Detach: same value, no gradient path.
    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }
}
