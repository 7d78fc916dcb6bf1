//! Dense and sparse linear algebra, row/column surgery, and row-structured
//! nonlinearities.

use super::{DiffOp, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// C = op_a(A) · op_b(B) with optional transposes, row-major, naive ikj loop.
pub(crate) fn matmul_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    assert_eq!(a.rank(), 2, "matmul lhs rank");
    assert_eq!(b.rank(), 2, "matmul rhs rank");
    let (am, an) = (a.shape()[0], a.shape()[1]);
    let (bm, bn) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (an, am) } else { (am, an) };
    let (kb, n) = if tb { (bn, bm) } else { (bm, bn) };
    assert_eq!(k, kb, "matmul inner dim: {:?} x {:?} (ta={ta}, tb={tb})", a.shape(), b.shape());

    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = if ta { ad[p * an + i] } else { ad[i * an + p] };
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            if tb {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += av * bd[j * bn + p];
                }
            } else {
                let brow = &bd[p * bn..p * bn + n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    Tensor::from_vec([m, n], out)
}

struct MatMul;

impl<T: Real> DiffOp<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        matmul_raw(x[0], x[1], false, false)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (x[0], x[1]);
        let ga = needs[0].then(|| matmul_raw(g, b, false, true));
        let gb = needs[1].then(|| matmul_raw(a, g, true, false));
        vec![ga, gb]
    }
}

/// x[m,n] + bias[n] on every row.
struct AddRowBroadcast;

impl<T: Real> DiffOp<T> for AddRowBroadcast {
    fn name(&self) -> &'static str {
        "add_row_broadcast"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (a, b) = (x[0], x[1]);
        assert_eq!(a.rank(), 2);
        assert_eq!(b.shape(), &[a.shape()[1]], "bias shape");
        let n = a.shape()[1];
        let mut out = a.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
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
        let n = x[0].shape()[1];
        let ga = needs[0].then(|| g.clone());
        let gb = needs[1].then(|| {
            let mut acc = vec![T::zero(); n];
            for row in g.data().chunks(n) {
                for (a, &gv) in acc.iter_mut().zip(row) {
                    *a += gv;
                }
            }
            Tensor::from_vec([n], acc)
        });
        vec![ga, gb]
    }
}

/// Concatenate along the last dim; leading dims must match.
struct ConcatLast;

impl<T: Real> DiffOp<T> for ConcatLast {
    fn name(&self) -> &'static str {
        "concat_last"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let lead = &x[0].shape()[..x[0].rank() - 1];
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = x
            .iter()
            .map(|t| {
                assert_eq!(&t.shape()[..t.rank() - 1], lead, "concat leading dims");
                *t.shape().last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (t, &w) in x.iter().zip(&widths) {
                out.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Tensor::from_vec(shape, out)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let total = *out.shape().last().unwrap();
        let rows = out.len() / total;
        let mut offset = 0;
        x.iter()
            .zip(needs)
            .map(|(t, &need)| {
                let w = *t.shape().last().unwrap();
                let res = need.then(|| {
                    let mut part = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        let base = r * total + offset;
                        part.extend_from_slice(&g.data()[base..base + w]);
                    }
                    Tensor::from_vec(t.shape().to_vec(), part)
                });
                offset += w;
                res
            })
            .collect()
    }
}

/// Stack rank-2 tensors with equal column counts along rows.
struct ConcatRows;

impl<T: Real> DiffOp<T> for ConcatRows {
    fn name(&self) -> &'static str {
        "concat_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let n = x[0].shape()[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for t in x {
            assert_eq!(t.rank(), 2);
            assert_eq!(t.shape()[1], n, "concat_rows column mismatch");
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        Tensor::from_vec([rows, n], data)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let mut offset = 0;
        x.iter()
            .zip(needs)
            .map(|(t, &need)| {
                let len = t.len();
                let res = need.then(|| {
                    Tensor::from_vec(t.shape().to_vec(), g.data()[offset..offset + len].to_vec())
                });
                offset += len;
                res
            })
            .collect()
    }
}

/// out[i] = x[idx[i]] over rows of a rank-2 tensor; backward scatter-adds.
struct GatherRows {
    idx: Vec<usize>,
}

impl<T: Real> DiffOp<T> for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 2);
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let mut out = Vec::with_capacity(self.idx.len() * n);
        for &i in &self.idx {
            assert!(i < m, "gather index {i} out of {m} rows");
            out.extend_from_slice(&x.data()[i * n..(i + 1) * n]);
        }
        Tensor::from_vec([self.idx.len(), n], out)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let n = x[0].shape()[1];
        let mut gx = Tensor::zeros(x[0].shape().to_vec());
        let dst = gx.data_mut();
        for (k, &i) in self.idx.iter().enumerate() {
            for j in 0..n {
                dst[i * n + j] += g.data()[k * n + j];
            }
        }
        vec![Some(gx)]
    }
}

/// out[i] = x[i, idx[i]] — one element per row (cross-entropy picks).
struct TakePerRow {
    idx: Vec<usize>,
}

impl<T: Real> DiffOp<T> for TakePerRow {
    fn name(&self) -> &'static str {
        "take_per_row"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 2);
        assert_eq!(x.shape()[0], self.idx.len());
        let n = x.shape()[1];
        let out: Vec<T> = self.idx.iter().enumerate().map(|(i, &j)| x.data()[i * n + j]).collect();
        Tensor::from_vec([self.idx.len()], out)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let n = x[0].shape()[1];
        let mut gx = Tensor::zeros(x[0].shape().to_vec());
        let dst = gx.data_mut();
        for (i, &j) in self.idx.iter().enumerate() {
            dst[i * n + j] += g.data()[i];
        }
        vec![Some(gx)]
    }
}

/// Slice the last dim to [a, b).
struct SliceLast {
    a: usize,
    b: usize,
}

impl<T: Real> DiffOp<T> for SliceLast {
    fn name(&self) -> &'static str {
        "slice_last"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        let n = *x.shape().last().unwrap();
        assert!(self.a <= self.b && self.b <= n, "slice [{}, {}) of last dim {n}", self.a, self.b);
        let w = self.b - self.a;
        let rows = x.len() / n;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&x.data()[r * n + self.a..r * n + self.b]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        Tensor::from_vec(shape, out)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let n = *x[0].shape().last().unwrap();
        let w = self.b - self.a;
        let rows = x[0].len() / n;
        let mut gx = Tensor::zeros(x[0].shape().to_vec());
        let dst = gx.data_mut();
        for r in 0..rows {
            dst[r * n + self.a..r * n + self.b].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
        }
        vec![Some(gx)]
    }
}

/// Unit-normalize each row; rows with norm ≤ eps become zero (grad zero too).
struct NormalizeRows<T> {
    eps: T,
}

impl<T: Real> DiffOp<T> for NormalizeRows<T> {
    fn name(&self) -> &'static str {
        "normalize_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 2);
        let n = x.shape()[1];
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(n) {
            let r = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if r > self.eps {
                for v in row {
                    *v /= r;
                }
            } else {
                for v in row {
                    *v = T::zero();
                }
            }
        }
        out
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = x[0];
        let n = x.shape()[1];
        let mut gx = Tensor::zeros(x.shape().to_vec());
        let dst = gx.data_mut();
        for (i, (xrow, (orow, grow))) in x
            .data()
            .chunks(n)
            .zip(out.data().chunks(n).zip(g.data().chunks(n)))
            .enumerate()
        {
            let r = xrow.iter().map(|&v| v * v).sum::<T>().sqrt();
            if r <= self.eps {
                continue;
            }
            // d(x/r)/dx = (I - n n^T)/r
            let dot: T = orow.iter().zip(grow).map(|(&o, &gv)| o * gv).sum();
            for j in 0..n {
                dst[i * n + j] = (grow[j] - orow[j] * dot) / r;
            }
        }
        vec![Some(gx)]
    }
}

/// Per-row dot product of two [m,n] tensors → [m].
struct DotRows;

impl<T: Real> DiffOp<T> for DotRows {
    fn name(&self) -> &'static str {
        "dot_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (a, b) = (x[0], x[1]);
        assert_eq!(a.shape(), b.shape());
        assert_eq!(a.rank(), 2);
        let n = a.shape()[1];
        let out: Vec<T> = a
            .data()
            .chunks(n)
            .zip(b.data().chunks(n))
            .map(|(ar, br)| ar.iter().zip(br).map(|(&p, &q)| p * q).sum())
            .collect();
        Tensor::from_vec([a.shape()[0]], out)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (x[0], x[1]);
        let n = a.shape()[1];
        let scale = |src: &Tensor<T>| {
            let mut out = src.clone();
            for (row, &gv) in out.data_mut().chunks_mut(n).zip(g.data()) {
                for v in row {
                    *v *= gv;
                }
            }
            out
        };
        vec![needs[0].then(|| scale(b)), needs[1].then(|| scale(a))]
    }
}

/// Scale each row of x[m,n] by s[m].
struct ScaleRows;

impl<T: Real> DiffOp<T> for ScaleRows {
    fn name(&self) -> &'static str {
        "scale_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let (a, s) = (x[0], x[1]);
        assert_eq!(a.rank(), 2);
        assert_eq!(s.shape(), &[a.shape()[0]], "row-scale shape");
        let n = a.shape()[1];
        let mut out = a.clone();
        for (row, &sv) in out.data_mut().chunks_mut(n).zip(s.data()) {
            for v in row {
                *v *= sv;
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
        let (a, s) = (x[0], x[1]);
        let n = a.shape()[1];
        let ga = needs[0].then(|| {
            let mut out = g.clone();
            for (row, &sv) in out.data_mut().chunks_mut(n).zip(s.data()) {
                for v in row {
                    *v *= sv;
                }
            }
            out
        });
        let gs = needs[1].then(|| {
            let out: Vec<T> = g
                .data()
                .chunks(n)
                .zip(a.data().chunks(n))
                .map(|(gr, ar)| gr.iter().zip(ar).map(|(&gv, &av)| gv * av).sum())
                .collect();
            Tensor::from_vec([a.shape()[0]], out)
        });
        vec![ga, gs]
    }
}

/// Row-wise log-softmax of [m,c].
struct LogSoftmaxRows;

impl<T: Real> DiffOp<T> for LogSoftmaxRows {
    fn name(&self) -> &'static str {
        "log_softmax_rows"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let x = x[0];
        assert_eq!(x.rank(), 2);
        let c = x.shape()[1];
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln() + mx;
            for v in row {
                *v -= lse;
            }
        }
        out
    }

    fn backward(
        &self,
        _x: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        // d lsm_j / d x_k = δ_jk − softmax_k  ⇒  gx = g − softmax · Σ_j g_j
        let c = out.shape()[1];
        let mut gx = g.clone();
        for (grow, orow) in gx.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
            let gsum: T = grow.iter().copied().sum();
            for (gv, &ov) in grow.iter_mut().zip(orow) {
                *gv -= ov.exp() * gsum;
            }
        }
        vec![Some(gx)]
    }
}

/// Compressed sparse row matrix (square), used for normalized adjacencies.
#[derive(Clone, Debug)]
pub struct CsrMatrix<T> {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Build from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r},{c}) out of {n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// y = A·x for dense x[m=n, k], scattering transposed products on demand.
    pub fn matvec_dense(&self, x: &Tensor<T>, transpose: bool) -> Tensor<T> {
        assert_eq!(x.rank(), 2);
        assert_eq!(x.shape()[0], self.n, "spmm dimension");
        let k = x.shape()[1];
        let mut out = Tensor::zeros([self.n, k]);
        let dst = out.data_mut();
        for r in 0..self.n {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[e];
                let v = self.values[e];
                let (src_row, dst_row) = if transpose { (r, c) } else { (c, r) };
                let src = &x.data()[src_row * k..(src_row + 1) * k];
                let d = &mut dst[dst_row * k..(dst_row + 1) * k];
                for (o, &s) in d.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }
}

/// Y = A·X with a fixed sparse A.
struct Spmm<T> {
    a: CsrMatrix<T>,
}

impl<T: Real> DiffOp<T> for Spmm<T> {
    fn name(&self) -> &'static str {
        "spmm"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        self.a.matvec_dense(x[0], false)
    }

    fn backward(
        &self,
        _x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(self.a.matvec_dense(g, true))]
    }
}

impl<T: Real> Graph<T> {
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Box::new(MatMul), &[a, b])
    }

    /// x[m,n] + bias[n].
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.apply(Box::new(AddRowBroadcast), &[x, bias])
    }

    pub fn concat_last(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        self.apply(Box::new(ConcatLast), xs)
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        self.apply(Box::new(ConcatRows), xs)
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        self.apply(Box::new(GatherRows { idx: idx.to_vec() }), &[x])
    }

    pub fn take_per_row(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        self.apply(Box::new(TakePerRow { idx: idx.to_vec() }), &[x])
    }

    pub fn slice_last(&mut self, x: NodeId, a: usize, b: usize) -> NodeId {
        self.apply(Box::new(SliceLast { a, b }), &[x])
    }

    pub fn normalize_rows(&mut self, x: NodeId, eps: T) -> NodeId {
        self.apply(Box::new(NormalizeRows { eps }), &[x])
    }

    pub fn dot_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.apply(Box::new(DotRows), &[a, b])
    }

    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> NodeId {
        self.apply(Box::new(ScaleRows), &[x, s])
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        self.apply(Box::new(LogSoftmaxRows), &[x])
    }

    /// Y = A·X for a constant sparse matrix A.
    pub fn spmm(&mut self, a: &CsrMatrix<T>, x: NodeId) -> NodeId {
        self.apply(Box::new(Spmm { a: a.clone() }), &[x])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_raw_transposes() {
        let a = Tensor::<f64>::from_vec([2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::<f64>::from_vec([3, 2], vec![7., 8., 9., 10., 11., 12.]);
        let c = matmul_raw(&a, &b, false, false);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        // (A^T)^T B = A B via transposing a pre-transposed lhs
        let at = Tensor::<f64>::from_vec([3, 2], vec![1., 4., 2., 5., 3., 6.]);
        let c2 = matmul_raw(&at, &b, true, false);
        assert_eq!(c2.data(), c.data());
        let bt = Tensor::<f64>::from_vec([2, 3], vec![7., 9., 11., 8., 10., 12.]);
        let c3 = matmul_raw(&a, &bt, false, true);
        assert_eq!(c3.data(), c.data());
    }

    #[test]
    fn matmul_gradient_is_exact_for_linear_maps() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::from_vec([2, 2], vec![1., 2., 3., 4.]));
        let x = g.constant(Tensor::from_vec([2, 1], vec![5., 6.]));
        let y = g.matmul(w, x);
        let s = g.sum(y);
        let grads = g.backward(s);
        // d sum(Wx)/dW = 1 x^T stacked per row
        assert_eq!(grads.get(w).unwrap().data(), &[5., 6., 5., 6.]);
    }

    #[test]
    fn gather_then_backward_scatters() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([3, 2], vec![1., 2., 3., 4., 5., 6.]));
        let picked = g.gather_rows(x, &[2, 0, 2]);
        assert_eq!(g.value(picked).data(), &[5., 6., 1., 2., 5., 6.]);
        let s = g.sum(picked);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn concat_last_roundtrip() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_vec([2, 2], vec![1., 2., 3., 4.]));
        let b = g.param(Tensor::from_vec([2, 1], vec![9., 10.]));
        let c = g.concat_last(&[a, b]);
        assert_eq!(g.value(c).shape(), &[2, 3]);
        assert_eq!(g.value(c).data(), &[1., 2., 9., 3., 4., 10.]);
        let back = g.slice_last(c, 2, 3);
        let s = g.sum(back);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none() || grads.get(a).unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(grads.get(b).unwrap().data(), &[1., 1.]);
    }

    #[test]
    fn normalize_rows_units_and_zero_fallback() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([2, 3], vec![3., 0., 4., 0., 0., 0.]));
        let n = g.normalize_rows(x, 1e-12);
        assert_eq!(g.value(n).data(), &[0.6, 0.0, 0.8, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_rows_sums_to_one_in_prob_space() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec([1, 3], vec![1.0, 2.0, 3.0]));
        let lsm = g.log_softmax_rows(x);
        let p: f64 = g.value(lsm).data().iter().map(|v| v.exp()).sum();
        assert_relative_eq!(p, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn csr_from_triplets_sums_duplicates_and_multiplies() {
        let a = CsrMatrix::from_triplets(
            3,
            vec![(0, 1, 2.0), (1, 0, 3.0), (2, 2, 1.0), (0, 1, 0.5)],
        );
        assert_eq!(a.nnz(), 3);
        let x = Tensor::<f64>::from_vec([3, 1], vec![1.0, 10.0, 100.0]);
        let y = a.matvec_dense(&x, false);
        assert_eq!(y.data(), &[25.0, 3.0, 100.0]);
        let yt = a.matvec_dense(&x, true);
        assert_eq!(yt.data(), &[30.0, 2.5, 100.0]);
    }

    #[test]
    fn spmm_backward_is_transpose_product() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]);
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([2, 1], vec![4.0, 5.0]));
        let y = g.spmm(&a, x);
        assert_eq!(g.value(y).data(), &[14.0, 15.0]);
        let s = g.sum(y);
        let grads = g.backward(s);
        // grad = A^T 1 = column sums
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 5.0]);
    }
}
