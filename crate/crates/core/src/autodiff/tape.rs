//! Reverse-mode differentiation tape.
//!
//! Every operation on a [`Var`] evaluates eagerly, appends a node to the
//! tape and remembers which parents it came from. [`Tape::backward`] walks
//! the record in reverse, so the topological order is simply the insertion
//! order and every node is visited exactly once. Gradients reaching a node
//! along several paths are summed.

use std::cell::RefCell;
use std::sync::Arc;

use super::special::{digamma_unchecked, log_gamma_unchecked};
use super::tensor::{broadcast_index_map, broadcast_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Sigmoid,
    Tanh,
    Softplus,
    Log,
    Sqrt,
    Exp,
    LogGamma,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    StdPop,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    Affine { x: usize, scale: f64 },
    ClampMin { x: usize, lo: f64 },
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Reduce {
        kind: Reduction,
        x: usize,
        axis: Option<usize>,
    },
    Concat(Vec<usize>),
    Softmax(usize),
    LogSoftmax(usize),
    Rows { x: usize, idx: Vec<usize> },
    Cols { x: usize, idx: Vec<usize> },
    SegmentMean { x: usize, bags: Vec<Vec<usize>> },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` if `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads[v.id]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.id].clone(), g.clone()))
    }

    /// Gradient of `v`, zeros when `v` is disconnected from the loss.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite { op })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Splits a shape around `axis` into (outer, dim, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_rows(x: &Tensor) -> Vec<f64> {
    let (rows, cols) = x.dims2();
    let mut out = vec![0.0; x.numel()];
    for r in 0..rows {
        let src = &x.data()[r * cols..(r + 1) * cols];
        let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Trainable leaf; gradients are tracked for it.
    pub fn param(&self, value: Arc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Concatenates along the last axis.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat", "no operands"))?;
        let vals: Vec<Arc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let lead = &vals[0].shape()[..vals[0].rank().saturating_sub(1)];
        for v in &vals[1..] {
            if v.rank() != vals[0].rank() || &v.shape()[..v.rank().saturating_sub(1)] != lead {
                return Err(Error::dim("concat", first.value().shape(), v.shape()));
            }
        }
        if vals[0].rank() == 0 {
            return Err(Error::domain("concat", "scalars have no axis to concatenate"));
        }
        let outer: usize = lead.iter().product();
        let widths: Vec<usize> = vals.iter().map(|v| *v.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (v, &w) in vals.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = parts.iter().any(|p| self.requires_grad(p.id));
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::domain("backward", "loss must be a single value"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Unary(kind, x) => {
            let xv = nodes[*x].value.data();
            let y = out.data();
            let dx: Vec<f64> = (0..g.len())
                .map(|i| {
                    g[i] * match kind {
                        Unary::Neg => -1.0,
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::Tanh => 1.0 - y[i] * y[i],
                        Unary::Softplus => sigmoid(xv[i]),
                        Unary::Log => 1.0 / xv[i],
                        Unary::Sqrt => 0.5 / y[i],
                        Unary::Exp => y[i],
                        Unary::LogGamma => digamma_unchecked(xv[i]),
                    }
                })
                .collect();
            accumulate(grads, nodes, *x, dx);
        }
        Op::Binary(kind, a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let ma = broadcast_index_map(av.shape(), out.shape());
            let mb = broadcast_index_map(bv.shape(), out.shape());
            let (ad, bd) = (av.data(), bv.data());
            let mut ga = vec![0.0; av.numel()];
            let mut gb = vec![0.0; bv.numel()];
            for k in 0..g.len() {
                let (i, j) = (ma[k], mb[k]);
                match kind {
                    Binary::Add => {
                        ga[i] += g[k];
                        gb[j] += g[k];
                    }
                    Binary::Sub => {
                        ga[i] += g[k];
                        gb[j] -= g[k];
                    }
                    Binary::Mul => {
                        ga[i] += g[k] * bd[j];
                        gb[j] += g[k] * ad[i];
                    }
                    Binary::Div => {
                        ga[i] += g[k] / bd[j];
                        gb[j] -= g[k] * ad[i] / (bd[j] * bd[j]);
                    }
                }
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::Affine { x, scale } => {
            accumulate(grads, nodes, *x, g.iter().map(|v| v * scale).collect());
        }
        Op::ClampMin { x, lo } => {
            let xv = nodes[*x].value.data();
            let dx = g
                .iter()
                .zip(xv)
                .map(|(gi, &xi)| if xi > *lo { *gi } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *x, dx);
        }
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = av.dims2();
            let n = bv.dims2().1;
            if nodes[*a].requires_grad {
                // dA = G · Bᵀ
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let brow = &bv.data()[p * n..(p + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ · G
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::MatMulT(a, b) => {
            // out = A · Bᵀ with A: m×k, B: n×k
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = av.dims2();
            let n = bv.dims2().0;
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * bv.data()[j * k + p];
                        }
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            gb[j * k + p] += gij * av.data()[i * k + p];
                        }
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(x) => {
            let (r, c) = nodes[*x].value.dims2();
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Reduce { kind, x, axis } => {
            let xv = &nodes[*x].value;
            let (outer, dim, inner) = match axis {
                Some(ax) => split_axis(xv.shape(), *ax),
                None => (1, xv.numel(), 1),
            };
            let mut gx = vec![0.0; xv.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let oi = o * inner + i;
                    let idx = |d: usize| o * dim * inner + d * inner + i;
                    match kind {
                        Reduction::Sum => (0..dim).for_each(|d| gx[idx(d)] = g[oi]),
                        Reduction::Mean => (0..dim).for_each(|d| gx[idx(d)] = g[oi] / dim as f64),
                        Reduction::StdPop => {
                            let s = out.data()[oi];
                            if s > 0.0 {
                                let mu = (0..dim).map(|d| xv.data()[idx(d)]).sum::<f64>() / dim as f64;
                                for d in 0..dim {
                                    gx[idx(d)] = g[oi] * (xv.data()[idx(d)] - mu) / (dim as f64 * s);
                                }
                            }
                        }
                        Reduction::Max => {
                            let best = (0..dim)
                                .max_by(|&p, &q| {
                                    xv.data()[idx(p)]
                                        .partial_cmp(&xv.data()[idx(q)])
                                        .unwrap()
                                        .then(q.cmp(&p))
                                })
                                .unwrap();
                            gx[idx(best)] = g[oi];
                        }
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Concat(parts) => {
            let widths: Vec<usize> = parts
                .iter()
                .map(|p| *nodes[*p].value.shape().last().unwrap())
                .collect();
            let total: usize = widths.iter().sum();
            let outer = g.len() / total;
            let mut offset = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                let mut gp = Vec::with_capacity(outer * w);
                for o in 0..outer {
                    gp.extend_from_slice(&g[o * total + offset..o * total + offset + w]);
                }
                accumulate(grads, nodes, *p, gp);
                offset += w;
            }
        }
        Op::Softmax(x) => {
            let (rows, cols) = out.dims2();
            let y = out.data();
            let mut gx = vec![0.0; y.len()];
            for r in 0..rows {
                let s = r * cols;
                let dot: f64 = (0..cols).map(|j| g[s + j] * y[s + j]).sum();
                for j in 0..cols {
                    gx[s + j] = y[s + j] * (g[s + j] - dot);
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::LogSoftmax(x) => {
            let (rows, cols) = out.dims2();
            let y = out.data();
            let mut gx = vec![0.0; y.len()];
            for r in 0..rows {
                let s = r * cols;
                let gsum: f64 = g[s..s + cols].iter().sum();
                for j in 0..cols {
                    gx[s + j] = g[s + j] - y[s + j].exp() * gsum;
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Rows { x, idx } => {
            let xv = &nodes[*x].value;
            let (_, c) = xv.dims2();
            let mut gx = vec![0.0; xv.numel()];
            for (r, &src) in idx.iter().enumerate() {
                for j in 0..c {
                    gx[src * c + j] += g[r * c + j];
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::Cols { x, idx } => {
            let xv = &nodes[*x].value;
            let (rows, c) = xv.dims2();
            let w = idx.len();
            let mut gx = vec![0.0; xv.numel()];
            for r in 0..rows {
                for (j, &src) in idx.iter().enumerate() {
                    gx[r * c + src] += g[r * w + j];
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
        Op::SegmentMean { x, bags } => {
            let xv = &nodes[*x].value;
            let (_, c) = xv.dims2();
            let mut gx = vec![0.0; xv.numel()];
            for (r, bag) in bags.iter().enumerate() {
                let w = 1.0 / bag.len() as f64;
                for &src in bag {
                    for j in 0..c {
                        gx[src * c + j] += w * g[r * c + j];
                    }
                }
            }
            accumulate(grads, nodes, *x, gx);
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Single value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant_shared(self.value())
    }

    fn unary(self, kind: Unary, name: &'static str) -> Result<Var<'t>> {
        let x = self.value();
        let data = x.data();
        match kind {
            Unary::Log if data.iter().any(|&v| v <= 0.0) => {
                return Err(Error::domain("log", "non-positive input"))
            }
            Unary::Sqrt if data.iter().any(|&v| v <= 0.0) => {
                return Err(Error::domain("sqrt", "non-positive input"))
            }
            Unary::LogGamma if data.iter().any(|&v| v <= 0.0) => {
                return Err(Error::domain("log_gamma", "non-positive input"))
            }
            _ => {}
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |v| -v,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Softplus => softplus,
            Unary::Log => f64::ln,
            Unary::Sqrt => f64::sqrt,
            Unary::Exp => f64::exp,
            Unary::LogGamma => log_gamma_unchecked,
        };
        let out = finite(name, Tensor::from_parts(x.shape().to_vec(), data.iter().map(|&v| f(v)).collect()))?;
        Ok(self.tape.push(out, Op::Unary(kind, self.id), self.requires_grad()))
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.unary(Unary::Neg, "neg")
    }
    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid, "sigmoid")
    }
    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Unary::Tanh, "tanh")
    }
    /// log(1 + eˣ)
    pub fn softplus(self) -> Result<Var<'t>> {
        self.unary(Unary::Softplus, "softplus")
    }
    pub fn log(self) -> Result<Var<'t>> {
        self.unary(Unary::Log, "log")
    }
    pub fn sqrt(self) -> Result<Var<'t>> {
        self.unary(Unary::Sqrt, "sqrt")
    }
    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Unary::Exp, "exp")
    }
    pub fn log_gamma(self) -> Result<Var<'t>> {
        self.unary(Unary::LogGamma, "log_gamma")
    }

    fn binary(self, other: Var<'t>, kind: Binary, name: &'static str) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::dim(name, a.shape(), b.shape()))?;
        if matches!(kind, Binary::Div) && b.data().iter().any(|&v| v == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        let ma = broadcast_index_map(a.shape(), &shape);
        let mb = broadcast_index_map(b.shape(), &shape);
        let (ad, bd) = (a.data(), b.data());
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| match kind {
                Binary::Add => ad[i] + bd[j],
                Binary::Sub => ad[i] - bd[j],
                Binary::Mul => ad[i] * bd[j],
                Binary::Div => ad[i] / bd[j],
            })
            .collect();
        let out = finite(name, Tensor::from_parts(shape, data))?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::Binary(kind, self.id, other.id), rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add, "add")
    }
    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub, "sub")
    }
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul, "mul")
    }
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div, "div")
    }

    /// Multiplication by a constant.
    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        let x = self.value();
        let out = finite("scale", Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect()))?;
        Ok(self.tape.push(out, Op::Affine { x: self.id, scale: s }, self.requires_grad()))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.add(self.tape.scalar(c))
    }

    /// Elementwise max(x, lo); no gradient where the bound is active.
    pub fn clamp_min(self, lo: f64) -> Result<Var<'t>> {
        let x = self.value();
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|v| v.max(lo)).collect());
        Ok(self.tape.push(out, Op::ClampMin { x: self.id, lo }, self.requires_grad()))
    }

    fn matrix_dims(&self, op: &'static str, other: &Var<'t>) -> Result<((usize, usize), (usize, usize))> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::dim(op, a.shape(), b.shape()));
        }
        Ok((a.dims2(), b.dims2()))
    }

    /// Matrix product of an m×k and a k×n tensor.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let ((m, k), (k2, n)) = self.matrix_dims("matmul", &other)?;
        if k != k2 {
            return Err(Error::dim("matmul", &[m, k], &[k2, n]));
        }
        let (a, b) = (self.value(), other.value());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a.data()[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b.data()[p * n..(p + 1) * n];
                for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let out = finite("matmul", Tensor::from_parts(vec![m, n], out))?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    /// `self · otherᵀ` for m×k and n×k operands.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        let ((m, k), (n, k2)) = self.matrix_dims("matmul_t", &other)?;
        if k != k2 {
            return Err(Error::dim("matmul_t", &[m, k], &[n, k2]));
        }
        let (a, b) = (self.value(), other.value());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b.data()[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let out = finite("matmul_t", Tensor::from_parts(vec![m, n], out))?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMulT(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::dim("transpose", x.shape(), &[]));
        }
        let (r, c) = x.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x.data()[i * c + j];
            }
        }
        Ok(self.tape.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(self.id), self.requires_grad()))
    }

    /// Reduction over one axis (kept with extent 1) or over everything
    /// (scalar result).
    pub fn reduce(self, kind: Reduction, axis: Option<usize>) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(ax) = axis {
            if ax >= x.rank() {
                return Err(Error::domain("reduce", format!("axis {ax} out of range for {:?}", x.shape())));
            }
        }
        let (outer, dim, inner) = match axis {
            Some(ax) => split_axis(x.shape(), ax),
            None => (1, x.numel(), 1),
        };
        if dim == 0 {
            return Err(Error::domain("reduce", "empty reduction"));
        }
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let vals = (0..dim).map(|d| x.data()[o * dim * inner + d * inner + i]);
                let v = match kind {
                    Reduction::Sum => vals.sum(),
                    Reduction::Mean => vals.sum::<f64>() / dim as f64,
                    Reduction::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                    Reduction::StdPop => {
                        let vals: Vec<f64> = vals.collect();
                        let mu = vals.iter().sum::<f64>() / dim as f64;
                        (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / dim as f64).sqrt()
                    }
                };
                out.push(v);
            }
        }
        let shape = match axis {
            Some(ax) => {
                let mut s = x.shape().to_vec();
                s[ax] = 1;
                s
            }
            None => vec![],
        };
        let out = finite("reduce", Tensor::from_parts(shape, out))?;
        Ok(self.tape.push(out, Op::Reduce { kind, x: self.id, axis }, self.requires_grad()))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.reduce(Reduction::Sum, None)
    }
    pub fn mean(self) -> Result<Var<'t>> {
        self.reduce(Reduction::Mean, None)
    }
    pub fn std_pop(self) -> Result<Var<'t>> {
        self.reduce(Reduction::StdPop, None)
    }
    pub fn max(self) -> Result<Var<'t>> {
        self.reduce(Reduction::Max, None)
    }

    /// Softmax along the last axis.
    pub fn softmax(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() == 0 {
            return Err(Error::domain("softmax", "needs at least one axis"));
        }
        let out = Tensor::from_parts(x.shape().to_vec(), softmax_rows(&x));
        Ok(self.tape.push(finite("softmax", out)?, Op::Softmax(self.id), self.requires_grad()))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() == 0 {
            return Err(Error::domain("log_softmax", "needs at least one axis"));
        }
        let (rows, cols) = x.dims2();
        let mut out = vec![0.0; x.numel()];
        for r in 0..rows {
            let src = &x.data()[r * cols..(r + 1) * cols];
            let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + src.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..cols {
                out[r * cols + j] = src[j] - lse;
            }
        }
        let out = finite("log_softmax", Tensor::from_parts(x.shape().to_vec(), out))?;
        Ok(self.tape.push(out, Op::LogSoftmax(self.id), self.requires_grad()))
    }

    /// Gathers rows of a matrix (embedding lookup).
    pub fn rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::dim("rows", x.shape(), &[]));
        }
        let (r, c) = x.dims2();
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::domain("rows", format!("row {bad} out of range for {r} rows")));
        }
        if idx.is_empty() {
            return Err(Error::domain("rows", "empty selection"));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_parts(vec![idx.len(), c], out);
        Ok(self.tape.push(out, Op::Rows { x: self.id, idx: idx.to_vec() }, self.requires_grad()))
    }

    /// Gathers entries along the last axis.
    pub fn cols(self, idx: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() == 0 || x.rank() > 2 {
            return Err(Error::dim("cols", x.shape(), &[]));
        }
        let (r, c) = x.dims2();
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::domain("cols", format!("column {bad} out of range for {c} columns")));
        }
        if idx.is_empty() {
            return Err(Error::domain("cols", "empty selection"));
        }
        let mut out = Vec::with_capacity(r * idx.len());
        for row in 0..r {
            out.extend(idx.iter().map(|&j| x.data()[row * c + j]));
        }
        let shape = if x.rank() == 1 { vec![idx.len()] } else { vec![r, idx.len()] };
        Ok(self.tape.push(
            Tensor::from_parts(shape, out),
            Op::Cols { x: self.id, idx: idx.to_vec() },
            self.requires_grad(),
        ))
    }

    /// Row `i` of the output is the mean of the rows listed in `bags[i]`.
    pub fn segment_mean(self, bags: &[Vec<usize>]) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::dim("segment_mean", x.shape(), &[]));
        }
        let (r, c) = x.dims2();
        if bags.is_empty() || bags.iter().any(Vec::is_empty) {
            return Err(Error::domain("segment_mean", "empty bag"));
        }
        let mut out = vec![0.0; bags.len() * c];
        for (b, bag) in bags.iter().enumerate() {
            for &src in bag {
                if src >= r {
                    return Err(Error::domain("segment_mean", format!("row {src} out of range for {r} rows")));
                }
                for j in 0..c {
                    out[b * c + j] += x.data()[src * c + j];
                }
            }
            let w = bag.len() as f64;
            out[b * c..(b + 1) * c].iter_mut().for_each(|v| *v /= w);
        }
        Ok(self.tape.push(
            Tensor::from_parts(vec![bags.len(), c], out),
            Op::SegmentMean { x: self.id, bags: bags.to_vec() },
            self.requires_grad(),
        ))
    }
}
