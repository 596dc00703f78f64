//! Reverse-mode differentiation over a Wengert tape.
//!
//! Every primitive evaluates eagerly and appends a node. [`Tape::grad`]
//! walks the tape backwards and records the adjoint computation as new
//! nodes, so a gradient is itself a differentiable expression. That is what
//! lets a Langevin update `l - eta * grad_l E(l)` live on one tape and be
//! differentiated with respect to the energy parameters.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{same_shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    OneMinusSq(Var),
    Relu(Var),
    Softmax(Var),
    CrossEntropy(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    SqNorm(Var),
    SumLast(Var),
    BroadcastLast(Var),
    SumRows(Var),
    BroadcastRows(Var),
    Expand(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Pad {
        src: Var,
        axis: usize,
        start: usize,
    },
    Gather(Var, Arc<[usize]>),
    ScatterRows(Var, Arc<[usize]>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Tanh(..) => "tanh",
            Op::OneMinusSq(..) => "one_minus_sq",
            Op::Relu(..) => "relu",
            Op::Softmax(..) => "softmax",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SqNorm(..) => "sq_norm",
            Op::SumLast(..) => "sum_last",
            Op::BroadcastLast(..) => "broadcast_last",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Expand(..) => "expand",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Gather(..) => "gather",
            Op::ScatterRows(..) => "scatter_rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Concat(parts, _) => parts.clone(),
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::OneMinusSq(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::CrossEntropy(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SqNorm(a)
            | Op::SumLast(a)
            | Op::BroadcastLast(a)
            | Op::SumRows(a)
            | Op::BroadcastRows(a)
            | Op::Expand(a)
            | Op::Reshape(a)
            | Op::Gather(a, _)
            | Op::ScatterRows(a, _) => vec![*a],
            Op::Slice { src, .. } | Op::Pad { src, .. } => vec![*src],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation record. Distinct tapes share nothing.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, true)
    }

    /// Input treated as a constant by [`Tape::grad`].
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "leaf input".into(),
            });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().into(),
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    /// `[n, d]` matrix plus a length-`d` row vector on every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.rank() != 2 || bv.numel() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let v = xv.add(&bv.broadcast_rows(xv.rows()))?;
        self.push(v, Op::AddRow(x, bias))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push(v, Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    /// `1 - a^2` elementwise; the tanh derivative expressed through its output.
    pub fn one_minus_sq(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| 1.0 - x * x);
        self.push(v, Op::OneMinusSq(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_last();
        self.push(v, Op::Softmax(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.rows() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let c = lv.cols();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::invalid(format!("target {t} out of range {c}")));
            }
            let row = lv.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let v = Tensor::scalar(total / targets.len() as f64);
        self.push(v, Op::CrossEntropy(logits, targets.into()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Squared L2 norm of all entries.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sq_norm());
        self.push(v, Op::SqNorm(a))
    }

    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_last();
        self.push(v, Op::SumLast(a))
    }

    pub fn broadcast_last(&mut self, a: Var, width: usize) -> Result<Var> {
        let v = self.value(a).broadcast_last(width)?;
        self.push(v, Op::BroadcastLast(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_rows()?;
        self.push(v, Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let v = self.value(a).broadcast_rows(n);
        self.push(v, Op::BroadcastRows(a))
    }

    /// Fills `shape` with the value of a single-element tensor.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a).item()?;
        self.push(Tensor::full(shape, x), Op::Expand(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push(v, Op::Reshape(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&vals, axis)?;
        self.push(v, Op::Concat(parts.to_vec(), axis))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice(axis, start, len)?;
        self.push(
            v,
            Op::Slice {
                src: a,
                axis,
                start,
            },
        )
    }

    pub fn pad(&mut self, a: Var, axis: usize, start: usize, total: usize) -> Result<Var> {
        let v = self.value(a).pad(axis, start, total)?;
        self.push(
            v,
            Op::Pad {
                src: a,
                axis,
                start,
            },
        )
    }

    /// Row lookup, e.g. an embedding table indexed by token ids.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(table).gather_rows(indices)?;
        self.push(v, Op::Gather(table, indices.into()))
    }

    pub fn scatter_rows(&mut self, src: Var, indices: &[usize], n: usize) -> Result<Var> {
        let v = self.value(src).scatter_rows(indices, n)?;
        self.push(v, Op::ScatterRows(src, indices.into()))
    }

    /// Inner product of two same-shaped nodes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`,
    /// recorded as new differentiable nodes. Unreachable inputs get zeros.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let out_shape = self.shape(output).to_vec();
        if !self.value(output).is_scalar() {
            return Err(Error::NotScalar {
                op: "grad",
                shape: out_shape,
            });
        }
        let n = output.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; n];
        adj[output.0] = Some(self.constant(Tensor::ones(&out_shape))?);

        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.backward_op(Var(i), &op, g, &mut adj)?;
        }

        wrt.iter()
            .map(|&w| match adj.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(w).to_vec();
                    self.constant(Tensor::zeros(&shape))
                }
            })
            .collect()
    }

    /// Like [`Tape::grad`] but returns the gradient values.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let vars = self.grad(output, wrt)?;
        Ok(vars.iter().map(|&v| self.value(v).clone()).collect())
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, contrib: Var) -> Result<()> {
        adj[target.0] = Some(match adj[target.0] {
            None => contrib,
            Some(prev) => self.add(prev, contrib)?,
        });
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(&mut self, node: Var, op: &Op, g: Var, adj: &mut [Option<Var>]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(a) {
                    self.accumulate(adj, a, g)?;
                }
                if self.needs(b) {
                    self.accumulate(adj, b, g)?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    self.accumulate(adj, a, g)?;
                }
                if self.needs(b) {
                    let c = self.scale(g, -1.0)?;
                    self.accumulate(adj, b, c)?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let c = self.mul(g, b)?;
                    self.accumulate(adj, a, c)?;
                }
                if self.needs(b) {
                    let c = self.mul(g, a)?;
                    self.accumulate(adj, b, c)?;
                }
            }
            Op::Scale(a, k) => {
                let c = self.scale(g, k)?;
                self.accumulate(adj, a, c)?;
            }
            Op::AddRow(x, b) => {
                if self.needs(x) {
                    self.accumulate(adj, x, g)?;
                }
                if self.needs(b) {
                    let s = self.sum_rows(g)?;
                    let bshape = self.shape(b).to_vec();
                    let c = self.reshape(s, &bshape)?;
                    self.accumulate(adj, b, c)?;
                }
            }
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let bt = self.transpose(b)?;
                    let c = self.matmul(g, bt)?;
                    self.accumulate(adj, a, c)?;
                }
                if self.needs(b) {
                    let at = self.transpose(a)?;
                    let c = self.matmul(at, g)?;
                    self.accumulate(adj, b, c)?;
                }
            }
            Op::Transpose(a) => {
                let c = self.transpose(g)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Tanh(a) => {
                let d = self.one_minus_sq(node)?;
                let c = self.mul(g, d)?;
                self.accumulate(adj, a, c)?;
            }
            Op::OneMinusSq(a) => {
                let d = self.scale(a, -2.0)?;
                let c = self.mul(g, d)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Relu(a) => {
                // closed at zero: derivative 0
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask)?;
                let c = self.mul(g, m)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Softmax(a) => {
                let width = self.value(node).cols();
                let gy = self.mul(g, node)?;
                let s = self.sum_last(gy)?;
                let sb = self.broadcast_last(s, width)?;
                let diff = self.sub(g, sb)?;
                let c = self.mul(node, diff)?;
                self.accumulate(adj, a, c)?;
            }
            Op::CrossEntropy(logits, ref targets) => {
                let shape = self.shape(logits).to_vec();
                let rows = shape[0];
                let mut onehot = Tensor::zeros(&shape);
                for (i, &t) in targets.iter().enumerate() {
                    onehot.data_mut()[i * shape[1] + t] = 1.0;
                }
                let oh = self.constant(onehot)?;
                let p = self.softmax(logits)?;
                let d = self.sub(p, oh)?;
                let d = self.scale(d, 1.0 / rows as f64)?;
                let ge = self.expand(g, &shape)?;
                let c = self.mul(ge, d)?;
                self.accumulate(adj, logits, c)?;
            }
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                let c = self.expand(g, &shape)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Mean(a) => {
                let shape = self.shape(a).to_vec();
                let n = self.value(a).numel() as f64;
                let e = self.expand(g, &shape)?;
                let c = self.scale(e, 1.0 / n)?;
                self.accumulate(adj, a, c)?;
            }
            Op::SqNorm(a) => {
                let shape = self.shape(a).to_vec();
                let e = self.expand(g, &shape)?;
                let two_a = self.scale(a, 2.0)?;
                let c = self.mul(e, two_a)?;
                self.accumulate(adj, a, c)?;
            }
            Op::SumLast(a) => {
                let width = self.value(a).cols();
                let c = self.broadcast_last(g, width)?;
                self.accumulate(adj, a, c)?;
            }
            Op::BroadcastLast(a) => {
                let c = self.sum_last(g)?;
                self.accumulate(adj, a, c)?;
            }
            Op::SumRows(a) => {
                let n = self.value(a).rows();
                let c = self.broadcast_rows(g, n)?;
                self.accumulate(adj, a, c)?;
            }
            Op::BroadcastRows(a) => {
                let s = self.sum_rows(g)?;
                let shape = self.shape(a).to_vec();
                let c = self.reshape(s, &shape)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Expand(a) => {
                let s = self.sum(g)?;
                let shape = self.shape(a).to_vec();
                let c = self.reshape(s, &shape)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                let c = self.reshape(g, &shape)?;
                self.accumulate(adj, a, c)?;
            }
            Op::Concat(ref parts, axis) => {
                let mut offset = 0;
                for &p in parts.iter() {
                    let len = self.shape(p)[axis];
                    if self.needs(p) {
                        let c = self.slice(g, axis, offset, len)?;
                        self.accumulate(adj, p, c)?;
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let total = self.shape(src)[axis];
                let c = self.pad(g, axis, start, total)?;
                self.accumulate(adj, src, c)?;
            }
            Op::Pad { src, axis, start } => {
                let len = self.shape(src)[axis];
                let c = self.slice(g, axis, start, len)?;
                self.accumulate(adj, src, c)?;
            }
            Op::Gather(table, ref idx) => {
                let n = self.value(table).rows();
                let c = self.scatter_rows(g, idx, n)?;
                self.accumulate(adj, table, c)?;
            }
            Op::ScatterRows(src, ref idx) => {
                let c = self.gather(g, idx)?;
                self.accumulate(adj, src, c)?;
            }
        }
        Ok(())
    }
}

/// Shape guard for callers assembling composite ops.
pub fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    same_shape(op, a, b)
}
