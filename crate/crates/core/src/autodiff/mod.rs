//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves either own
//! their data or borrow it (model parameters are borrowed for the lifetime of
//! the tape, so a forward pass never copies the weights). [`Tape::backward`]
//! walks the record in reverse exactly once.

mod conv;
mod gemm;
mod layers;
mod loss;
mod norm;
mod pool;

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use conv::Padding;
pub use norm::BatchStats;

pub(crate) use conv::{Axis, ConvGeom};

/// Whether batch statistics and dropout are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Operand precision of the matrix products inside conv and dense layers.
///
/// Tensors are always stored in `f64`. Under `F32` the convolution and dense
/// kernels run in single precision and widen their results, which roughly
/// doubles throughput. Gradient checks need `F64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    BatchNorm {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Reshape {
        input: Var,
    },
    Sum {
        input: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

pub(crate) struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    tracked: bool,
    op: Op,
}

/// Record of one forward pass.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    precision: Precision,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
            consumed: false,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Places a borrowed tensor on the tape. It is tracked iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &'a Tensor) -> Var {
        self.leaf_slice(tensor.shape(), tensor.data(), tensor.requires_grad())
    }

    /// Places a borrowed tensor on the tape with an explicit tracking flag.
    pub fn leaf_as(&mut self, tensor: &'a Tensor, track: bool) -> Var {
        self.leaf_slice(tensor.shape(), tensor.data(), track)
    }

    pub fn leaf_slice(&mut self, shape: &[usize], data: &'a [f64], track: bool) -> Var {
        self.push(shape.to_vec(), Cow::Borrowed(data), track, Op::Leaf)
    }

    /// Places an owned tensor on the tape.
    pub fn leaf_owned(&mut self, tensor: Tensor) -> Var {
        let track = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.push(shape, Cow::Owned(tensor.into_data()), track, Op::Leaf)
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    pub fn to_tensor(&self, var: Var) -> Tensor {
        let node = &self.nodes[var.0];
        Tensor::new(&node.shape, node.value.to_vec()).expect("node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[0]
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        value: Cow<'a, [f64]>,
        tracked: bool,
        op: Op,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            tracked,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, var: Var) -> &Node<'a> {
        &self.nodes[var.0]
    }

    /// Runs the reverse sweep from the scalar `loss`.
    ///
    /// Gradients are produced for every tracked leaf. The tape can be swept
    /// only once; a second call returns [`Error::TapeConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.node(loss).shape),
            ));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.node(loss).tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            match op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => conv::backward(self, &geom, input, weight, bias, &g, &mut grads),
                Op::MaxPool2d { input, argmax } => {
                    pool::backward(self, input, &argmax, &g, &mut grads)
                }
                Op::Relu { input } => layers::relu_backward(self, input, Var(i), &g, &mut grads),
                Op::BatchNorm {
                    input,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                    train,
                } => norm::backward(
                    self, input, scale, shift, &xhat, &inv_std, train, &g, &mut grads,
                ),
                Op::Dropout { input, mask } => {
                    layers::dropout_backward(self, input, &mask, &g, &mut grads)
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => layers::dense_backward(self, input, weight, bias, &g, &mut grads),
                Op::Concat { parts } => layers::concat_backward(self, &parts, &g, &mut grads),
                Op::Reshape { input } => {
                    if self.node(input).tracked {
                        accumulate(&mut grads[input.0], g);
                    }
                }
                Op::Sum { input } => {
                    if self.node(input).tracked {
                        let n = self.node(input).value.len();
                        accumulate(&mut grads[input.0], vec![g[0]; n]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    labels,
                } => loss::backward(self, logits, &probs, &labels, &g, &mut grads),
            }
        }

        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Adds `contribution` into a gradient slot, allocating on first use.
pub(crate) fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// Gradients of a scalar with respect to the tracked leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a leaf. Tracked leaves the loss does not depend on get an
    /// all-zero gradient; untracked leaves get `None`.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let shape = &self.shapes[var.0];
        self.grads[var.0].as_ref().map(|g| Tensor::new(shape, g.clone()).expect("gradient shape"))
    }

    pub fn get_or_zero(&self, var: Var) -> Tensor {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        let shape = self.shapes[var.0].clone();
        self.grads[var.0]
            .take()
            .map(|g| Tensor::new(&shape, g).expect("gradient shape"))
    }

    /// Stores the gradient of `var` on `tensor` (zeros when the loss does not
    /// depend on it).
    pub fn write_into(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        tensor.set_grad(self.get_or_zero(var).into_data())
    }
}
