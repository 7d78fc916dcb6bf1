//! Reductions to scalars.

use super::{DiffOp, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

struct Sum;

impl<T: Real> DiffOp<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        Tensor::scalar(x[0].sum())
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        vec![Some(Tensor::filled(x[0].shape().to_vec(), g.item()))]
    }
}

struct Mean;

impl<T: Real> DiffOp<T> for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Tensor<T> {
        let n = T::from_usizec(x[0].len().max(1));
        Tensor::scalar(x[0].sum() / n)
    }

    fn backward(
        &self,
        x: &[&Tensor<T>],
        _out: &Tensor<T>,
        g: &Tensor<T>,
        _needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let n = T::from_usizec(x[0].len().max(1));
        vec![Some(Tensor::filled(x[0].shape().to_vec(), g.item() / n))]
    }
}

impl<T: Real> Graph<T> {
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.apply(Box::new(Sum), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.apply(Box::new(Mean), &[x])
    }

    /// Mean of |a - b| — the workhorse reconstruction term.
    pub fn l1(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean(ad)
    }

    /// Mean of (a - b)^2.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }
}
