//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`]
//! handle to its output. Nodes only ever refer to earlier nodes, so the
//! tape is topologically ordered by construction and [`Tape::backward`]
//! is a single reverse sweep.
//!
//! ```
//! use artseg::autodiff::Tape;
//! use artseg::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new([3], vec![1.0, -2.0, 3.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod conv;
mod loss;
mod norm;
mod pointwise;
mod pool;

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use norm::{BatchNormConfig, Mode, RunningStats};

#[cfg(test)]
pub(crate) use conv::forward as conv_forward;
#[cfg(test)]
pub(crate) use norm::forward as norm_forward;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitives the tape can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Conv2d,
    MaxPool2d,
    UpsampleNearest,
    BatchNorm2d,
    Relu,
    Sigmoid,
    Add,
    Mul,
    ConcatChannels,
    SoftmaxCrossEntropy,
    Sum,
}

impl Primitive {
    pub const ALL: [Primitive; 11] = [
        Primitive::Conv2d,
        Primitive::MaxPool2d,
        Primitive::UpsampleNearest,
        Primitive::BatchNorm2d,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Add,
        Primitive::Mul,
        Primitive::ConcatChannels,
        Primitive::SoftmaxCrossEntropy,
        Primitive::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Conv2d => "conv2d",
            Primitive::MaxPool2d => "max_pool2d",
            Primitive::UpsampleNearest => "upsample_nearest",
            Primitive::BatchNorm2d => "batch_norm2d",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::ConcatChannels => "concat_channels",
            Primitive::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Primitive::Sum => "sum",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        input: Var,
        /// Flat input index of the selected element, per output element.
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<u8>,
    },
    Sum {
        input: Var,
    },
}

impl<T> Op<T> {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::Conv2d { .. } => Primitive::Conv2d,
            Op::MaxPool2d { .. } => Primitive::MaxPool2d,
            Op::Upsample { .. } => Primitive::UpsampleNearest,
            Op::BatchNorm { .. } => Primitive::BatchNorm2d,
            Op::Relu { .. } => Primitive::Relu,
            Op::Sigmoid { .. } => Primitive::Sigmoid,
            Op::Add { .. } => Primitive::Add,
            Op::Mul { .. } => Primitive::Mul,
            Op::Concat { .. } => Primitive::ConcatChannels,
            Op::SoftmaxCe { .. } => Primitive::SoftmaxCrossEntropy,
            Op::Sum { .. } => Primitive::Sum,
        })
    }
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of operations for one forward pass.
///
/// All values on a tape share the tape's element type, which fixes its
/// [`crate::Precision`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<Primitive>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Test fixture: makes the backward rule of `op` return wrong
    /// gradients so verification tooling can be checked for detection.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, op: Primitive) {
        self.fault = Some(op);
    }

    /// Fingerprint of every piecewise choice on the tape: the sign of
    /// each ReLU input and the winner of each max-pool window.
    ///
    /// Two evaluations of the same graph with equal fingerprints lie on
    /// the same smooth piece of the function.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &x in self.value(*input).data() {
                        (x > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Pushes an operation node whose gradient requirement is inherited
    /// from its inputs.
    fn record(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, op)
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every
    /// differentiable leaf reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(root.value.shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let mut contributions = self.backward_node(node, &upstream)?;
            if self.fault.is_some() && self.fault == node.op.primitive() {
                for (_, g) in &mut contributions {
                    for x in g.data_mut() {
                        *x = *x * T::from_f64(1.5) + T::from_f64(1e-3);
                    }
                }
            }
            for (var, g) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, upstream: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => conv::backward(
                self.value(*input),
                self.value(*weight),
                upstream,
                *stride,
                *padding,
                [needs(*input), needs(*weight)],
            )
            .into_contributions(*input, *weight, *bias),
            Op::MaxPool2d { input, argmax } => {
                vec![(*input, pool::max_pool_backward(self.value(*input), argmax, upstream))]
            }
            Op::Upsample { input, factor } => {
                vec![(*input, pool::upsample_backward(self.value(*input), *factor, upstream))]
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            } => {
                let (dx, dgamma, dbeta) =
                    norm::backward(self.value(*gamma), x_hat, inv_std, *batch_stats, upstream);
                vec![(*input, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::Relu { input } => vec![(*input, pointwise::relu_backward(self.value(*input), upstream))],
            Op::Sigmoid { input: x } => vec![(*x, pointwise::sigmoid_backward(&node.value, upstream))],
            Op::Add { a, b } => pointwise::add_backward(*a, *b, self.value(*b).shape(), upstream),
            Op::Mul { a, b } => pointwise::mul_backward(*a, *b, self.value(*a), self.value(*b), upstream),
            Op::Concat { a, b } => pointwise::concat_backward(*a, *b, self.value(*a).shape(), upstream),
            Op::SoftmaxCe { logits, probs, labels } => {
                vec![(*logits, loss::softmax_ce_backward(self.value(*logits), probs, labels, upstream))]
            }
            Op::Sum { input } => {
                let g = upstream.data()[0];
                vec![(*input, Tensor::full(self.value(*input).shape().to_vec(), g))]
            }
        })
    }
}

/// Result of [`Tape::backward`]: one optional gradient per tape node.
///
/// Only differentiable leaves keep their gradient; intermediate buffers
/// are released during the sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x*x + x) → 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -1.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, -1.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
        assert!(g.get(y).is_none(), "intermediate buffers are released");
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones([2]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn primitive_names_round_trip() {
        for p in Primitive::ALL {
            assert_eq!(Primitive::from_name(p.name()), Some(p));
        }
    }
}
