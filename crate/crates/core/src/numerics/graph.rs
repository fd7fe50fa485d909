//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so walking them backwards is a valid
//! topological order for back-propagation. Reductions always run in index
//! order, which keeps results bitwise reproducible.

#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamSet};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};

/// Probabilities below this are clamped inside the log-loss.
pub const PROB_FLOOR: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Tensor),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    MaxRows(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Unfold(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    MaskedSoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        gold: usize,
        probs: Vec<f64>,
    },
    Hinge {
        logits: NodeId,
        gold: usize,
    },
    SumSquares(NodeId),
    Sum(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, NodeId>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(what: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Numerically stable softmax of a slice (max subtracted first).
pub(crate) fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Graph {
    /// Graph for evaluation: dropout is the identity.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Graph for training: dropout masks are drawn from a generator seeded
    /// with `seed`.
    pub fn training(seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(params.get(id).value.clone(), Op::Param, true);
        self.params.insert(id, node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err("matmul_bt", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = Tensor::zeros(m, n);
        matmul_bt_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulBt(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Add a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let mut out = av.clone();
        let n = av.cols();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += rv.data()[i % n];
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Inverted dropout with drop probability `p`; identity when the graph
    /// is not training or `p == 0`.
    pub fn dropout(&mut self, a: NodeId, p: f64) -> NodeId {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return a;
        };
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let v = &self.nodes[a.0].value;
        let mask = Tensor::from_fn(v.rows(), v.cols(), |_, _| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let data = v.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let out = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::MulConst(a, mask), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Column-wise maximum over rows (`m × n → 1 × n`). Ties pick the first row.
    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let (m, n) = (v.rows(), v.cols());
        let mut argmax = vec![0; n];
        let mut best = v.row_slice(0).to_vec();
        for r in 1..m {
            for (c, &x) in v.row_slice(r).iter().enumerate() {
                if x > best[c] {
                    best[c] = x;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::row(best), Op::MaxRows(a, argmax), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), v));
            }
            cols += v.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out.data_mut()[r * cols + offset..r * cols + offset + v.cols()]
                    .copy_from_slice(v.row_slice(r));
            }
            offset += v.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if len == 0 || start + len > v.cols() {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {:?}", v.shape())));
        }
        let out = Tensor::from_fn(v.rows(), len, |r, c| v.get(r, start + c));
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if len == 0 || start + len > v.rows() {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {:?}", v.shape())));
        }
        let cols = v.cols();
        let out = Tensor::new(len, cols, v.data()[start * cols..(start + len) * cols].to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Sliding windows of `window` consecutive rows, flattened:
    /// `s × d → (s − window + 1) × (window · d)`.
    pub fn unfold(&mut self, a: NodeId, window: usize) -> Result<NodeId> {
        let v = self.value(a);
        if window == 0 || window > v.rows() {
            return Err(Error::Shape(format!("window {window} over {:?}", v.shape())));
        }
        let d = v.cols();
        let positions = v.rows() - window + 1;
        let mut out = Tensor::zeros(positions, window * d);
        for i in 0..positions {
            out.data_mut()[i * window * d..(i + 1) * window * d]
                .copy_from_slice(&v.data()[i * d..(i + window) * d]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Unfold(a, window), rg))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let v = self.value(table);
        if ids.is_empty() {
            return Err(Error::Shape("gather of no rows".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v.rows()) {
            return Err(Error::Shape(format!("gather row {bad} of {:?}", v.shape())));
        }
        let d = v.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(v.row_slice(i));
        }
        let out = Tensor::new(ids.len(), d, data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), rg))
    }

    /// Row-wise softmax where columns with `keep[c] == false` get exactly zero
    /// weight. A row with no kept column is all zeros.
    pub fn masked_softmax_rows(&mut self, a: NodeId, keep: &[bool]) -> Result<NodeId> {
        let v = self.value(a);
        if keep.len() != v.cols() {
            return Err(Error::Shape(format!("mask of {} for {:?}", keep.len(), v.shape())));
        }
        let mut out = Tensor::zeros(v.rows(), v.cols());
        let cols = v.cols();
        for r in 0..v.rows() {
            let row = v.row_slice(r);
            let kept: Vec<f64> = row.iter().zip(keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect();
            if kept.is_empty() {
                continue;
            }
            let probs = softmax_slice(&kept);
            let mut it = probs.into_iter();
            for c in 0..cols {
                if keep[c] {
                    out.data_mut()[r * cols + c] = it.next().expect("one prob per kept column");
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MaskedSoftmaxRows(a), rg))
    }

    /// Row-wise layer normalization with learned `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.cols();
        if gv.shape() != [1, n] || bv.shape() != [1, n] {
            return Err(shape_err("layer_norm", xv, gv));
        }
        let mut normed = Tensor::zeros(xv.rows(), n);
        let mut out = Tensor::zeros(xv.rows(), n);
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std.push(istd);
            for c in 0..n {
                let h = (row[c] - mean) * istd;
                normed.data_mut()[r * n + c] = h;
                out.data_mut()[r * n + c] = h * gv.data()[c] + bv.data()[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            rg,
        ))
    }

    /// `-ln(max(softmax(logits)[gold], 1e-12))` for a `1 × K` row.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let v = self.value(logits);
        if v.rows() != 1 || gold >= v.cols() {
            return Err(Error::Shape(format!("cross-entropy gold {gold} for {:?}", v.shape())));
        }
        let probs = softmax_slice(v.data());
        let loss = -probs[gold].max(PROB_FLOOR).ln();
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, gold, probs }, rg))
    }

    /// Crammer–Singer multiclass hinge: `max(0, 1 + max_{j≠gold} s_j − s_gold)`.
    pub fn multiclass_hinge(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let v = self.value(logits);
        if v.rows() != 1 || gold >= v.cols() || v.cols() < 2 {
            return Err(Error::Shape(format!("hinge gold {gold} for {:?}", v.shape())));
        }
        let s = v.data();
        let rival = (0..s.len())
            .filter(|&j| j != gold)
            .map(|j| s[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = 1.0 + rival - s[gold];
        let loss = if s.iter().all(|x| x.is_finite()) {
            margin.max(0.0)
        } else {
            f64::NAN
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::Hinge { logits, gold }, rg))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().map(|x| x * x).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::SumSquares(a), rg)
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("sum of nothing".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            let v = self.value(p);
            if v.shape() != out.shape() {
                return Err(shape_err("sum", &out, v));
            }
            out.add_assign(v);
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Sum(parts.to_vec()), rg))
    }

    /// Back-propagate from a `1 × 1` node. Gradients of earlier passes on
    /// this graph are discarded.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::Shape(format!("backward from {:?}", lv.shape())));
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite(format!("loss {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to a node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to a parameter used in this graph.
    pub fn param_grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|&node| self.grad(node))
    }

    /// Add this graph's parameter gradients into `params`.
    pub fn accumulate_grads(&self, params: &mut ParamSet) {
        let mut bound: Vec<(&ParamId, &NodeId)> = self.params.iter().collect();
        bound.sort();
        for (&pid, &node) in bound {
            if let Some(g) = self.grad(node) {
                params.get_mut(pid).grad.add_assign(g);
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let value = &node.value;
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut send = |id: NodeId, contribution: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if needs(*a) {
                    let mut ga = Tensor::zeros(m, k);
                    matmul_bt_acc(g.data(), bv.data(), ga.data_mut(), m, n, k);
                    send(*a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(k, n);
                    matmul_at_acc(av.data(), g.data(), gb.data_mut(), m, k, n);
                    send(*b, gb);
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if needs(*a) {
                    let mut ga = Tensor::zeros(m, k);
                    matmul_acc(g.data(), bv.data(), ga.data_mut(), m, n, k);
                    send(*a, ga);
                }
                if needs(*b) {
                    let mut gb = Tensor::zeros(n, k);
                    matmul_at_acc(g.data(), av.data(), gb.data_mut(), m, n, k);
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if needs(*row) {
                    let n = g.cols();
                    let mut gr = vec![0.0; n];
                    for (i, x) in g.data().iter().enumerate() {
                        gr[i % n] += x;
                    }
                    send(*row, Tensor::row(gr));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(*a) {
                    send(*a, zip_map(g, bv, |gi, bi| gi * bi));
                }
                if needs(*b) {
                    send(*b, zip_map(g, av, |gi, ai| gi * ai));
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|x| x * f)),
            Op::MulConst(a, mask) => send(*a, zip_map(g, mask, |gi, m| gi * m)),
            Op::Sigmoid(a) => send(*a, zip_map(g, value, |gi, y| gi * y * (1.0 - y))),
            Op::Tanh(a) => send(*a, zip_map(g, value, |gi, y| gi * (1.0 - y * y))),
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                send(*a, zip_map(g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
            }
            Op::Gelu(a) => {
                let x = &self.nodes[a.0].value;
                send(*a, zip_map(g, x, |gi, xi| gi * gelu_grad(xi)));
            }
            Op::MaxRows(a, argmax) => {
                let x = &self.nodes[a.0].value;
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                let n = x.cols();
                for (c, &r) in argmax.iter().enumerate() {
                    ga.data_mut()[r * n + c] += g.data()[c];
                }
                send(*a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = &self.nodes[p.0].value;
                    if needs(p) {
                        let gp = Tensor::from_fn(pv.rows(), pv.cols(), |r, c| g.get(r, offset + c));
                        send(p, gp);
                    }
                    offset += pv.cols();
                }
            }
            Op::SliceCols(a, start) => {
                let x = &self.nodes[a.0].value;
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                let n = x.cols();
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        ga.data_mut()[r * n + start + c] = g.get(r, c);
                    }
                }
                send(*a, ga);
            }
            Op::SliceRows(a, start) => {
                let x = &self.nodes[a.0].value;
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                let n = x.cols();
                ga.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                send(*a, ga);
            }
            Op::Unfold(a, window) => {
                let x = &self.nodes[a.0].value;
                let d = x.cols();
                let mut ga = Tensor::zeros(x.rows(), d);
                for i in 0..g.rows() {
                    let grow = g.row_slice(i);
                    for (j, gv) in grow.iter().enumerate() {
                        ga.data_mut()[i * d + j] += gv;
                    }
                }
                debug_assert_eq!(g.cols(), window * d);
                send(*a, ga);
            }
            Op::Gather(table, ids) => {
                let t = &self.nodes[table.0].value;
                let d = t.cols();
                let mut gt = Tensor::zeros(t.rows(), d);
                for (i, &row) in ids.iter().enumerate() {
                    for c in 0..d {
                        gt.data_mut()[row * d + c] += g.get(i, c);
                    }
                }
                send(*table, gt);
            }
            Op::MaskedSoftmaxRows(a) => {
                let mut ga = Tensor::zeros(value.rows(), value.cols());
                let n = value.cols();
                for r in 0..value.rows() {
                    let y = value.row_slice(r);
                    let gy = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        ga.data_mut()[r * n + c] = y[c] * (gy[c] - dot);
                    }
                }
                send(*a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let gv = &self.nodes[gamma.0].value;
                let n = normed.cols();
                if needs(*x) {
                    let mut gx = Tensor::zeros(normed.rows(), n);
                    for r in 0..normed.rows() {
                        let h = normed.row_slice(r);
                        let gh: Vec<f64> = (0..n).map(|c| g.get(r, c) * gv.data()[c]).collect();
                        let mean_gh = gh.iter().sum::<f64>() / n as f64;
                        let mean_gh_h = gh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for c in 0..n {
                            gx.data_mut()[r * n + c] = inv_std[r] * (gh[c] - mean_gh - h[c] * mean_gh_h);
                        }
                    }
                    send(*x, gx);
                }
                if needs(*gamma) {
                    let mut gg = vec![0.0; n];
                    for r in 0..normed.rows() {
                        for c in 0..n {
                            gg[c] += g.get(r, c) * normed.get(r, c);
                        }
                    }
                    send(*gamma, Tensor::row(gg));
                }
                if needs(*beta) {
                    let mut gb = vec![0.0; n];
                    for r in 0..g.rows() {
                        for c in 0..n {
                            gb[c] += g.get(r, c);
                        }
                    }
                    send(*beta, Tensor::row(gb));
                }
            }
            Op::SoftmaxCrossEntropy { logits, gold, probs } => {
                let scale = g.item();
                let grad = if probs[*gold] < PROB_FLOOR {
                    vec![0.0; probs.len()]
                } else {
                    probs
                        .iter()
                        .enumerate()
                        .map(|(j, &p)| scale * (p - if j == *gold { 1.0 } else { 0.0 }))
                        .collect()
                };
                send(*logits, Tensor::row(grad));
            }
            Op::Hinge { logits, gold } => {
                let s = self.nodes[logits.0].value.data();
                let mut grad = vec![0.0; s.len()];
                if value.item() > 0.0 {
                    let rival = (0..s.len())
                        .filter(|&j| j != *gold)
                        .fold(None::<usize>, |best, j| match best {
                            Some(b) if s[b] >= s[j] => Some(b),
                            _ => Some(j),
                        })
                        .expect("at least two classes");
                    grad[rival] = g.item();
                    grad[*gold] = -g.item();
                }
                send(*logits, Tensor::row(grad));
            }
            Op::SumSquares(a) => {
                let x = &self.nodes[a.0].value;
                let s = g.item();
                send(*a, x.map(|xi| 2.0 * xi * s));
            }
            Op::Sum(parts) => {
                for &p in parts {
                    send(p, g.clone());
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("matching shapes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![1.0, 2.0]));
        assert_eq!(g.dropout(x, 0.5), x);
    }

    #[test]
    fn dropout_keeps_expectation_roughly() {
        let mut g = Graph::training(7);
        let x = g.input(Tensor::row(vec![1.0; 10_000]));
        let y = g.dropout(x, 0.5);
        let v = g.value(y);
        assert!(v.data().iter().all(|&z| z == 0.0 || z == 2.0));
        let mean = v.data().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(2, 3, vec![1.0, 2.0, 50.0, 0.0, 0.0, 0.0]).unwrap());
        let y = g.masked_softmax_rows(x, &[true, true, false]).unwrap();
        let v = g.value(y);
        assert_eq!(v.get(0, 2), 0.0);
        assert!((v.get(1, 0) - 0.5).abs() < 1e-15);
        assert!((v.row_slice(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hinge_is_zero_beyond_margin() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![3.0, 1.0, 0.5]));
        let l = g.multiclass_hinge(x, 0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let l = g.multiclass_hinge(x, 2).unwrap();
        assert_eq!(g.value(l).item(), 3.5);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }
}
