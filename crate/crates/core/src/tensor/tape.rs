use super::ops::{self, ConvDims};
use super::{LabelMap, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        cols: Vec<f64>,
        dims: ConvDims,
    },
    Relu(Var),
    SoftmaxCe {
        logits: Var,
        dlogits: Vec<f64>,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var`
    /// does not require gradients or is unreachable from the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but yields zeros for unreachable inputs.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let dims = ops::conv_dims(x, k, b)?;
        let cols = ops::im2col(x.data(), &dims);
        let out = ops::conv2d_from_cols(&cols, k, b, &dims);
        let rg = self.requires_grad(input) || self.requires_grad(kernel) || self.requires_grad(bias);
        // The unfolded input is only needed for the kernel gradient.
        let cols = if self.requires_grad(kernel) { cols } else { Vec::new() };
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                cols,
                dims,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.requires_grad(input);
        self.push(out, Op::Relu(input), rg)
    }

    /// Mean pixel-wise softmax cross-entropy; see
    /// [`ops::softmax_ce_with_grad`].
    pub fn pixel_softmax_ce(
        &mut self,
        logits: Var,
        target: &LabelMap,
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let (loss, dlogits) = ops::softmax_ce_with_grad(self.value(logits), target, weights)?;
        let rg = self.requires_grad(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, dlogits }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_fn(ta.shape(), |i| ta.data()[i] * factor);
        let rg = self.requires_grad(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    /// Back-propagates from a scalar `loss`, consuming the tape.
    ///
    /// Gradients reaching a node along several paths are summed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if loss.0 >= n {
            return Err(Error::contract("loss handle does not belong to this tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        let nodes = self.nodes;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    cols,
                    dims,
                } => {
                    let hw = dims.h * dims.w;
                    if nodes[kernel.0].requires_grad {
                        let mut dk = vec![0.0; dims.c_out * dims.patch()];
                        ops::gemm(dims.c_out, hw, dims.patch(), &g, false, cols, true, 0.0, &mut dk);
                        accumulate(&mut grads[kernel.0], dk);
                    }
                    if nodes[bias.0].requires_grad {
                        let db = g.chunks(hw).map(|row| row.iter().sum()).collect();
                        accumulate(&mut grads[bias.0], db);
                    }
                    if nodes[input.0].requires_grad {
                        let k = &nodes[kernel.0].value;
                        let mut dcols = vec![0.0; dims.patch() * hw];
                        ops::gemm(dims.patch(), dims.c_out, hw, k.data(), true, &g, false, 0.0, &mut dcols);
                        accumulate(&mut grads[input.0], ops::col2im(&dcols, dims));
                    }
                }
                Op::Relu(input) => {
                    if nodes[input.0].requires_grad {
                        let x = nodes[input.0].value.data();
                        let dx = g
                            .iter()
                            .zip(x)
                            .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[input.0], dx);
                    }
                }
                Op::SoftmaxCe { logits, dlogits } => {
                    if nodes[logits.0].requires_grad {
                        let s = g[0];
                        accumulate(&mut grads[logits.0], dlogits.iter().map(|v| v * s).collect());
                    }
                }
                Op::Add(a, b) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if nodes[b.0].requires_grad {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Scale(a, factor) => {
                    if nodes[a.0].requires_grad {
                        accumulate(&mut grads[a.0], g.iter().map(|v| v * factor).collect());
                    }
                }
                Op::Sum(a) => {
                    if nodes[a.0].requires_grad {
                        let len = nodes[a.0].value.len();
                        accumulate(&mut grads[a.0], vec![g[0]; len]);
                    }
                }
            }
        }
        // Only leaf gradients are meaningful to callers.
        for (slot, node) in grads.iter_mut().zip(&nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
