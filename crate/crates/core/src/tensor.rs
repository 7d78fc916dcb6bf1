//! Dense row-major tensors with cheap clones.
//!
//! Data is shared behind an `Arc`; all operations produce new tensors, so a
//! clone is a pointer bump. This is what lets autodiff ops capture their
//! inputs without copying buffers.

use std::sync::Arc;

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "shape {shape:?} does not match data length {}", data.len());
        Self { shape, data: Arc::new(data) }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self { shape, data: Arc::new(vec![T::zero(); n]) }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self { shape, data: Arc::new(vec![v; n]) }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: Arc::new(vec![v]) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} elements", self.data.len());
        self.data[0]
    }

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        if Arc::get_mut(&mut self.data).is_none() {
            self.data = Arc::new(self.data.as_ref().clone());
        }
        Arc::get_mut(&mut self.data).expect("unshared after copy-on-write")
    }

    /// Same buffer, new shape (element count must match).
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {shape:?}", self.shape);
        Self { shape, data: Arc::clone(&self.data) }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect()),
        }
    }

    /// In-place `self += other` (used by gradient accumulation).
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        let dst = Arc::make_mut(&mut self.data);
        for (d, &s) in dst.iter_mut().zip(other.data.iter()) {
            *d += s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row-major 2D accessor.
    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Mutable row-major 2D accessor.
    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut T {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &mut self.data_mut()[i * cols + j]
    }

    /// Row-major 3D accessor.
    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Rows of a rank-2 tensor as chunks.
    pub fn rows(&self) -> std::slice::Chunks<'_, T> {
        debug_assert_eq!(self.rank(), 2);
        self.data.chunks(self.shape[1])
    }

    /// Convert the scalar type (used by I/O paths that persist `f32`).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::<U>::from_vec(
            self.shape.clone(),
            self.data.iter().map(|x| U::from_f64c(x.to_f64c())).collect(),
        )
    }

    /// Flatten a list of same-shape rows into one rank-2 tensor.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(vec![rows.len(), cols], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_is_shallow_until_mutated() {
        let a = Tensor::<f64>::from_vec([2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 9.0);
    }

    #[test]
    fn reshape_shares_data() {
        let a = Tensor::<f32>::from_vec([2, 3], vec![0.0; 6]);
        let b = a.reshape([3, 2]);
        assert_eq!(b.shape(), &[3, 2]);
        assert_eq!(b.len(), 6);
    }

    #[test]
    fn accessors() {
        let a = Tensor::<f64>::from_vec([2, 3], (0..6).map(|i| i as f64).collect());
        assert_eq!(a.at2(1, 2), 5.0);
        let b = a.reshape([1, 2, 3]);
        assert_eq!(b.at3(0, 1, 0), 3.0);
    }
}
