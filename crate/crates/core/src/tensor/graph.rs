use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{Element, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Matmul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Expand(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape of operations, in topological order by construction.
pub struct Graph<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to the graph's trainable leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    graph: u64,
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(&v.idx)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node<T>> {
        if v.graph != self.id {
            return Err(Error::Detached);
        }
        self.nodes.get(v.idx).ok_or(Error::Detached)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.check(v)?.value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var> {
        let value = value.checked(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.idx].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var { graph: self.id, idx: self.nodes.len() - 1 })
    }

    /// Records a leaf. It receives a gradient iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad });
        Var { graph: self.id, idx: self.nodes.len() - 1 }
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.nodes.push(Node { value: tensor, op: Op::Leaf, requires_grad: false });
        Var { graph: self.id, idx: self.nodes.len() - 1 }
    }

    /// Elementwise add; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add_suffix(self.value(a)?, self.value(b)?)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::mul(self.value(a)?, self.value(b)?)?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let x = self.value(a)?;
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v * k).collect());
        self.push(out, Op::Scale(a, k), &[a], "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a)?, self.value(b)?)?;
        self.push(out, Op::Matmul(a, b), &[a, b], "matmul")
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = kernels::permute(self.value(a)?, axes)?;
        self.push(out, Op::Permute(a, axes.to_vec()), &[a], "permute")
    }

    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let rank = self.value(a)?.shape().len();
        if d0 >= rank || d1 >= rank {
            return Err(Error::shape("transpose", format!("axes ({d0}, {d1}) for rank {rank}")));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(d0, d1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a)?;
        let out = Tensor::new(shape.to_vec(), x.data().to_vec())
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", x.shape())))?;
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a)?.sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a)?.mean());
        self.push(out, Op::Mean(a), &[a], "mean")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, xhat, rstd) = kernels::layer_norm(self.value(x)?, self.value(gamma)?, self.value(beta)?)?;
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta], "layer_norm")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = kernels::gelu(self.value(a)?);
        self.push(out, Op::Gelu(a), &[a], "gelu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = kernels::softmax_last(self.value(a)?);
        self.push(out, Op::Softmax(a), &[a], "softmax")
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = kernels::log_softmax_last(self.value(a)?);
        self.push(out, Op::LogSoftmax(a), &[a], "log_softmax")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let values = xs.iter().map(|&v| self.value(v)).collect::<Result<Vec<_>>>()?;
        let out = kernels::concat(&values, axis)?;
        self.push(out, Op::Concat(xs.to_vec(), axis), xs, "concat")
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = kernels::slice(self.value(x)?, axis, start, len)?;
        self.push(out, Op::Slice { x, axis, start }, &[x], "slice")
    }

    /// Repeats `x` over new leading axes: shape `s` becomes `lead ++ s`.
    pub fn expand(&mut self, x: Var, lead: &[usize]) -> Result<Var> {
        let v = self.value(x)?;
        let copies: usize = lead.iter().product();
        if copies == 0 {
            return Err(Error::shape("expand", format!("leading extents {lead:?}")));
        }
        let mut shape = lead.to_vec();
        shape.extend_from_slice(v.shape());
        let mut data = Vec::with_capacity(copies * v.len());
        for _ in 0..copies {
            data.extend_from_slice(v.data());
        }
        self.push(Tensor::from_parts(shape, data), Op::Expand(x), &[x], "expand")
    }

    /// Reverse pass from a scalar `loss`. Every recorded node is visited once,
    /// in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let node = self.check(loss)?;
        if !node.value.is_scalar() {
            return Err(Error::LossNotScalar(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.idx).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::full(node.value.shape().to_vec(), T::one()));

        for idx in (0..=loss.idx).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (input, gi) in self.local_grads(node, &g)? {
                if !self.nodes[input.idx].requires_grad {
                    continue;
                }
                let gi = gi.checked("backward")?;
                match &mut grads[input.idx] {
                    Some(acc) => {
                        for (a, &b) in acc.data.iter_mut().zip(gi.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let n = &self.nodes[i];
                (n.requires_grad && matches!(n.op, Op::Leaf)).then(|| g.map(|g| (i, g))).flatten()
            })
            .collect();
        Ok(Gradients { graph: self.id, grads })
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.idx].value
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => {
                let gb = kernels::sum_to_suffix(g, self.val(*b).shape());
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if self.wants(*a) {
                    v.push((*a, kernels::mul(g, self.val(*b))?));
                }
                if self.wants(*b) {
                    v.push((*b, kernels::mul(g, self.val(*a))?));
                }
                v
            }
            Op::Scale(a, k) => {
                vec![(*a, Tensor::from_parts(g.shape().to_vec(), g.data().iter().map(|&v| v * *k).collect()))]
            }
            Op::Matmul(a, b) => {
                let (ga, gb) = kernels::matmul_backward(self.val(*a), self.val(*b), g, self.wants(*a), self.wants(*b));
                let mut v = Vec::with_capacity(2);
                if let Some(ga) = ga {
                    v.push((*a, ga));
                }
                if let Some(gb) = gb {
                    v.push((*b, gb));
                }
                v
            }
            Op::Permute(a, axes) => vec![(*a, kernels::permute(g, &kernels::inverse_axes(axes))?)],
            Op::Reshape(a) => {
                vec![(*a, Tensor::from_parts(self.val(*a).shape().to_vec(), g.data().to_vec()))]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.val(*a).shape().to_vec(), g.data()[0]))],
            Op::Mean(a) => {
                let x = self.val(*a);
                let v = g.data()[0] / T::of(x.len() as f64);
                vec![(*a, Tensor::full(x.shape().to_vec(), v))]
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (gx, gg, gbeta) = kernels::layer_norm_backward(g, self.val(*gamma), xhat, rstd);
                vec![(*x, gx), (*gamma, gg), (*beta, gbeta)]
            }
            Op::Gelu(a) => vec![(*a, kernels::gelu_backward(self.val(*a), g))],
            Op::Softmax(a) => vec![(*a, kernels::softmax_backward(&node.value, g))],
            Op::LogSoftmax(a) => vec![(*a, kernels::log_softmax_backward(&node.value, g))],
            Op::Concat(xs, axis) => {
                let mut start = 0;
                let mut v = Vec::with_capacity(xs.len());
                for x in xs {
                    let len = self.val(*x).shape()[*axis];
                    v.push((*x, kernels::slice(g, *axis, start, len)?));
                    start += len;
                }
                v
            }
            Op::Slice { x, axis, start } => {
                vec![(*x, kernels::slice_backward(g, self.val(*x).shape(), *axis, *start))]
            }
            Op::Expand(x) => vec![(*x, kernels::sum_to_suffix(g, self.val(*x).shape()))],
        };
        Ok(out)
    }
}
