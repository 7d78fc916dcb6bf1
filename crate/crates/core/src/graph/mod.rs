//! Minimal tape-based reverse-mode automatic differentiation.
//!
//! Forward evaluation is eager: every operation computes its output tensor
//! immediately and records a node on the tape. Because nodes are appended in
//! evaluation order, the tape index order is already topological, and a single
//! reverse sweep in [`Graph::backward`] propagates gradients.
//!
//! Custom operations (rasterizer, skinning, feature sampling, ...) implement
//! [`DiffOp`] in their own modules and enter the tape through
//! [`Graph::apply`]; the standard elementwise / linear-algebra / convolution
//! vocabulary lives in the submodules here.

mod conv;
mod linalg;
mod ops;
mod reduce;

pub use linalg::CsrMatrix;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// A differentiable operation: eager forward plus a backward rule.
///
/// `forward` takes `&mut self` so an op can stash state it needs again in
/// `backward` (the rasterizer keeps its per-pixel contributor lists, for
/// example). `backward` receives the upstream gradient and returns one
/// optional gradient per input; `None` means "no gradient flows here", which
/// accumulates as zero. `needs[i]` is false when input `i` does not require
/// gradients, letting expensive ops skip work.
pub trait DiffOp<T: Real> {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Tensor<T>;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<NodeId>,
    /// Present only when this node requires gradients (constants drop it).
    op: Option<Box<dyn DiffOp<T>>>,
    requires_grad: bool,
}

/// The tape. One graph is built per optimization step and discarded after
/// `backward`; tensors are reference counted, so this is cheap.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives gradients (fixed data, targets, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Node { value, inputs: Vec::new(), op: None, requires_grad: false })
    }

    /// Leaf that accumulates gradients (trainable parameter or checked input).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Node { value, inputs: Vec::new(), op: None, requires_grad: true })
    }

    pub fn scalar_const(&mut self, v: T) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn item(&self, id: NodeId) -> T {
        self.nodes[id.0].value.item()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Run `op` eagerly on `inputs` and record the result.
    pub fn apply(&mut self, mut op: Box<dyn DiffOp<T>>, inputs: &[NodeId]) -> NodeId {
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
        let value = op.forward(&vals);
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: requires_grad.then_some(op),
            requires_grad,
        })
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root. Returns the gradient of the root
    /// with respect to every node that requires gradients.
    pub fn backward(&self, root: NodeId) -> Gradients<T> {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.nodes[root.0].value.shape()
        );
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(
            self.nodes[root.0].value.shape().to_vec(),
            T::one(),
        ));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = grads[id].clone() else { continue };

            let vals: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
            let needs: Vec<bool> =
                node.inputs.iter().map(|&i| self.nodes[i.0].requires_grad).collect();
            let input_grads = op.backward(&vals, &node.value, &grad, &needs);
            assert_eq!(
                input_grads.len(),
                node.inputs.len(),
                "op {} returned {} gradients for {} inputs",
                op.name(),
                input_grads.len(),
                node.inputs.len()
            );
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                assert_eq!(
                    g.shape(),
                    self.nodes[input.0].value.shape(),
                    "op {} gradient shape mismatch",
                    op.name()
                );
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of a backward sweep.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root w.r.t. `id`; `None` when no gradient reached it
    /// (treat as zero).
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient or an explicit zero tensor of the given shape.
    pub fn get_or_zero(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_no_grad() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_vec([2], vec![1.0, 2.0]));
        let b = g.param(Tensor::from_vec([2], vec![3.0, 4.0]));
        let s = g.mul(a, b);
        let total = g.sum(s);
        let grads = g.backward(total);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // f = sum(x*x + x) => df/dx = 2x + 1
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([2], vec![1.5, -2.0]));
        let sq = g.mul(x, x);
        let s = g.add(sq, x);
        let total = g.sum(s);
        let grads = g.backward(total);
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, -3.0]);
    }

    #[test]
    fn diamond_dependency_sums_paths() {
        // f = sum((x + x) * x) = 2*sum(x^2) => df/dx = 4x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([3], vec![1.0, 2.0, 3.0]));
        let two_x = g.add(x, x);
        let prod = g.mul(two_x, x);
        let total = g.sum(prod);
        let grads = g.backward(total);
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    #[should_panic(expected = "must be scalar")]
    fn backward_rejects_nonscalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec([2], vec![1.0, 2.0]));
        let y = g.add(x, x);
        let _ = g.backward(y);
    }
}
