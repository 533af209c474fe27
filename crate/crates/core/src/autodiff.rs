//! Reverse-mode differentiation over a linear record of tensor operations.

use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Var },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, k: usize },
    Upsample { x: Var },
    Act { x: Var, kind: Activation },
    Concat { a: Var, b: Var },
    Mask { x: Var, occ: Var },
    GlobalMax { x: Var, argmax: Vec<usize> },
    Linear { x: Var, w: Var, b: Var },
    SoftmaxCe { x: Var, labels: Vec<usize>, probs: Tensor<T> },
    BinaryCe { x: Var, targets: Vec<T> },
    VoxelCe { x: Var, labels: Vec<usize>, occ: Var },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Tensor<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Single-owner computation record. Nodes are appended in evaluation order,
/// so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::conv3d(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Conv { x, w, b }, &[x, w, b]))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Identity (no node recorded) when `k == 1`.
    pub fn avgpool(&mut self, x: Var, k: usize) -> Result<Var> {
        if k == 1 && self.value(x).rank() == 5 {
            return Ok(x);
        }
        let out = ops::avgpool(self.value(x), k)?;
        Ok(self.push(out, Op::AvgPool { x, k }, &[x]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let out = ops::upsample2(self.value(x))?;
        Ok(self.push(out, Op::Upsample { x }, &[x]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let out = ops::activation(self.value(x), kind);
        self.push(out, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat { a, b }, &[a, b]))
    }

    /// Occupancy masking; gradient flows to `x` only.
    pub fn mask(&mut self, x: Var, occ: Var) -> Result<Var> {
        let out = ops::mask_mul(self.value(x), self.value(occ))?;
        Ok(self.push(out, Op::Mask { x, occ }, &[x]))
    }

    pub fn global_max(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::global_max(self.value(x))?;
        Ok(self.push(out, Op::GlobalMax { x, argmax }, &[x]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn softmax_cross_entropy(&mut self, x: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(x), labels)?;
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { x, labels: labels.to_vec(), probs }, &[x]))
    }

    pub fn binary_cross_entropy(&mut self, x: Var, targets: &[T]) -> Result<Var> {
        let loss = ops::binary_cross_entropy(self.value(x), targets)?;
        Ok(self.push(Tensor::scalar(loss), Op::BinaryCe { x, targets: targets.to_vec() }, &[x]))
    }

    pub fn voxel_cross_entropy(&mut self, x: Var, labels: &[usize], occ: Var) -> Result<Var> {
        let loss = ops::voxel_cross_entropy(self.value(x), labels, self.value(occ))?;
        Ok(self.push(Tensor::scalar(loss), Op::VoxelCe { x, labels: labels.to_vec(), occ }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        if weights.dims() != self.value(x).dims() {
            return Err(Error::shape("weighted_sum", self.value(x).dims(), weights.dims()));
        }
        let s = self.value(x).data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(acc) => acc.add_assign(&g).expect("gradient dims"),
            None => node.grad = Some(g),
        }
    }

    /// Clear all gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse sweep from a scalar loss, populating gradients of every node
    /// that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff("backward called twice without reset".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Autodiff(format!("loss must be scalar, got dims {:?}", self.value(loss).dims())));
        }
        self.backward_done = true;
        let seed = Tensor::full(self.value(loss).dims(), T::one());
        self.accumulate(loss, seed);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            self.propagate(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Tensor<T>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b } => {
                let want_x = self.nodes[x.0].requires_grad;
                let gr = ops::conv3d_backward(self.value(*x), self.value(*w), self.value(*b), g, want_x)?;
                if let Some(gx) = gr.input {
                    out.push((*x, gx));
                }
                out.push((*w, gr.weight));
                out.push((*b, gr.bias));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, ops::maxpool2_backward(self.value(*x).dims(), argmax, g)));
            }
            Op::AvgPool { x, k } => out.push((*x, ops::avgpool_backward(g, *k))),
            Op::Upsample { x } => out.push((*x, ops::upsample2_backward(self.value(*x).dims(), g))),
            Op::Act { x, kind } => {
                out.push((*x, ops::activation_backward(*kind, self.value(*x), &node.value, g)));
            }
            Op::Concat { a, b } => {
                let (ga, gb) = ops::concat_backward(g, self.value(*a).dims()[1]);
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Mask { x, occ } => out.push((*x, ops::mask_mul(g, self.value(*occ))?)),
            Op::GlobalMax { x, argmax } => {
                out.push((*x, ops::global_max_backward(self.value(*x).dims(), argmax, g)));
            }
            Op::Linear { x, w, b: bias } => {
                let (gx, gw, gb) = ops::linear_backward(self.value(*x), self.value(*w), g);
                out.push((*x, gx));
                out.push((*w, gw));
                out.push((*bias, gb));
            }
            Op::SoftmaxCe { x, labels, probs } => {
                out.push((*x, ops::softmax_cross_entropy_backward(probs, labels, g.data()[0])));
            }
            Op::BinaryCe { x, targets } => {
                out.push((*x, ops::binary_cross_entropy_backward(self.value(*x), targets, g.data()[0])));
            }
            Op::VoxelCe { x, labels, occ } => {
                let gx = ops::voxel_cross_entropy_backward(self.value(*x), labels, self.value(*occ), g.data()[0])?;
                out.push((*x, gx));
            }
            Op::Sum { x } => out.push((*x, Tensor::full(self.value(*x).dims(), g.data()[0]))),
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                out.push((*x, weights.map(|w| w * s)));
            }
        }
        for (v, gv) in out {
            self.accumulate(v, gv);
        }
        Ok(())
    }
}
