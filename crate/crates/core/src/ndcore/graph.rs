//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the node list is already a
//! topological order and the backward sweep simply walks it in reverse.

use super::tensor::{cholesky, cholesky_solve, matmul_raw, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Graph::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    /// Elementwise sum; the right operand may also be a row vector broadcast over rows.
    Add,
    /// Elementwise difference with the same broadcasting rule as `Add`.
    Sub,
    Scale(f64),
    Relu,
    Mean,
    Sum,
    Transpose,
    /// `out[i][j] = ‖a_i − b_j‖²` for row sets `a` (m×d) and `b` (n×d).
    SquaredEuclideanPairwise,
    /// Mean cross-entropy of row-wise softmax against integer labels.
    SoftmaxCrossEntropy(Vec<usize>),
    /// Solves `A X = B` for symmetric positive definite `A`.
    LinearSolveSpd,
}

#[derive(Debug, Clone)]
enum Origin {
    Param,
    Constant,
    Op(OpKind, Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    origin: Origin,
    value: Tensor,
    /// Op-specific forward intermediates reused by the backward rule
    /// (softmax probabilities, Cholesky factor).
    cache: Option<Vec<f64>>,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar loss with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; zeros when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

fn broadcast_compatible(a: &Tensor, b: &Tensor) -> Result<bool> {
    if a.shape() == b.shape() {
        return Ok(false);
    }
    if a.shape().len() == 2 && b.shape().len() == 1 && a.shape()[1] == b.shape()[0] {
        return Ok(true);
    }
    Err(Error::Dimension(format!(
        "cannot combine shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    )))
}

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "{what} expects a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Origin::Param, value, None)
    }

    /// Registers a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Origin::Constant, value, None)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_param(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].origin, Origin::Param)
    }

    fn push(&mut self, origin: Origin, value: Tensor, cache: Option<Vec<f64>>) -> NodeId {
        self.nodes.push(Node {
            origin,
            value,
            cache,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(c), &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }
    pub fn squared_euclidean_pairwise(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SquaredEuclideanPairwise, &[a, b])
    }
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.apply(OpKind::SoftmaxCrossEntropy(labels.to_vec()), &[logits])
    }
    pub fn linear_solve_spd(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LinearSolveSpd, &[a, b])
    }

    /// Evaluates `kind` on existing nodes and records the result.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = match kind {
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::SquaredEuclideanPairwise
            | OpKind::LinearSolveSpd => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Contract(format!(
                "{kind:?} takes {arity} inputs, got {}",
                inputs.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(Error::Contract(format!("unknown node {}", bad.0)));
        }
        let (value, cache) = self.forward(&kind, inputs)?;
        Ok(self.push(Origin::Op(kind, inputs.to_vec()), value, cache))
    }

    fn forward(&self, kind: &OpKind, inputs: &[NodeId]) -> Result<(Tensor, Option<Vec<f64>>)> {
        let x = self.value(inputs[0]);
        let out = match kind {
            OpKind::MatMul => {
                let y = self.value(inputs[1]);
                let (m, k) = require_matrix(x, "matmul")?;
                let (k2, n) = require_matrix(y, "matmul")?;
                if k != k2 {
                    return Err(Error::Dimension(format!(
                        "matmul of {:?} and {:?}",
                        x.shape(),
                        y.shape()
                    )));
                }
                Tensor::from_parts(vec![m, n], matmul_raw(x.data(), y.data(), m, k, n))
            }
            OpKind::Add | OpKind::Sub => {
                let y = self.value(inputs[1]);
                let broadcast = broadcast_compatible(x, y)?;
                let sign = if *kind == OpKind::Add { 1.0 } else { -1.0 };
                let n = y.len();
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| a + sign * y.data()[if broadcast { i % n } else { i }])
                    .collect();
                Tensor::from_parts(x.shape().to_vec(), data)
            }
            OpKind::Scale(c) => x.map(|v| c * v),
            OpKind::Relu => x.map(|v| v.max(0.0)),
            OpKind::Mean => {
                if x.is_empty() {
                    return Err(Error::Dimension("mean of empty tensor".into()));
                }
                Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
            }
            OpKind::Sum => Tensor::scalar(x.data().iter().sum()),
            OpKind::Transpose => {
                require_matrix(x, "transpose")?;
                x.transpose()
            }
            OpKind::SquaredEuclideanPairwise => {
                let y = self.value(inputs[1]);
                let (m, d) = require_matrix(x, "squared_euclidean_pairwise")?;
                let (n, d2) = require_matrix(y, "squared_euclidean_pairwise")?;
                if d != d2 {
                    return Err(Error::Dimension(format!(
                        "pairwise distance between {:?} and {:?}",
                        x.shape(),
                        y.shape()
                    )));
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    let a = x.row(i);
                    for j in 0..n {
                        out[i * n + j] = a
                            .iter()
                            .zip(y.row(j))
                            .map(|(p, q)| (p - q) * (p - q))
                            .sum();
                    }
                }
                Tensor::from_parts(vec![m, n], out)
            }
            OpKind::SoftmaxCrossEntropy(labels) => {
                let (m, c) = require_matrix(x, "softmax_cross_entropy")?;
                if labels.len() != m {
                    return Err(Error::Dimension(format!(
                        "{} labels for {m} logit rows",
                        labels.len()
                    )));
                }
                if m == 0 {
                    return Err(Error::Dimension("softmax_cross_entropy on zero rows".into()));
                }
                if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                    return Err(Error::Contract(format!(
                        "label {bad} outside 0..{c}"
                    )));
                }
                let mut probs = vec![0.0; m * c];
                let mut total = 0.0;
                for i in 0..m {
                    let row = x.row(i);
                    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                    let lse = mx + z.ln();
                    for j in 0..c {
                        probs[i * c + j] = (row[j] - lse).exp();
                    }
                    total += lse - row[labels[i]];
                }
                return Ok((Tensor::scalar(total / m as f64), Some(probs)));
            }
            OpKind::LinearSolveSpd => {
                let b = self.value(inputs[1]);
                let (n, n2) = require_matrix(x, "linear_solve_spd")?;
                if n != n2 {
                    return Err(Error::Dimension(format!(
                        "linear_solve_spd needs a square matrix, got {:?}",
                        x.shape()
                    )));
                }
                let (bn, m) = require_matrix(b, "linear_solve_spd")?;
                if bn != n {
                    return Err(Error::Dimension(format!(
                        "right-hand side {:?} does not match {:?}",
                        b.shape(),
                        x.shape()
                    )));
                }
                let asym = (0..n)
                    .flat_map(|i| (0..i).map(move |j| (i, j)))
                    .map(|(i, j)| (x.get2(i, j) - x.get2(j, i)).abs())
                    .fold(0.0, f64::max);
                let scale = x.data().iter().map(|v| v.abs()).fold(1.0, f64::max);
                if asym > 1e-10 * scale {
                    return Err(Error::Singular("matrix is not symmetric".into()));
                }
                let l = cholesky(x.data(), n).ok_or_else(|| {
                    Error::Singular("matrix is not positive definite".into())
                })?;
                let sol = cholesky_solve(&l, b.data(), n, m);
                return Ok((Tensor::from_parts(vec![n, m], sol), Some(l)));
            }
        };
        Ok((out, None))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Origin::Op(kind, inputs) = &node.origin {
                for (input, g) in inputs.iter().zip(self.vjp(kind, inputs, node, &upstream)) {
                    accumulate(&mut grads[input.0], g);
                }
            }
            grads[idx] = Some(upstream);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Vector-Jacobian products of one node, one tensor per input.
    fn vjp(&self, kind: &OpKind, inputs: &[NodeId], node: &Node, up: &Tensor) -> Vec<Tensor> {
        let x = self.value(inputs[0]);
        match kind {
            OpKind::MatMul => {
                let y = self.value(inputs[1]);
                let (m, k) = (x.shape()[0], x.shape()[1]);
                let n = y.shape()[1];
                let yt = y.transpose();
                let xt = x.transpose();
                vec![
                    Tensor::from_parts(vec![m, k], matmul_raw(up.data(), yt.data(), m, n, k)),
                    Tensor::from_parts(vec![k, n], matmul_raw(xt.data(), up.data(), k, m, n)),
                ]
            }
            OpKind::Add | OpKind::Sub => {
                let y = self.value(inputs[1]);
                let sign = if *kind == OpKind::Add { 1.0 } else { -1.0 };
                let gy = if x.shape() == y.shape() {
                    up.map(|v| sign * v)
                } else {
                    let n = y.len();
                    let mut acc = vec![0.0; n];
                    for (i, v) in up.data().iter().enumerate() {
                        acc[i % n] += sign * v;
                    }
                    Tensor::from_parts(y.shape().to_vec(), acc)
                };
                vec![up.clone(), gy]
            }
            OpKind::Scale(c) => vec![up.map(|v| c * v)],
            OpKind::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
                    .collect();
                vec![Tensor::from_parts(x.shape().to_vec(), data)]
            }
            OpKind::Mean => {
                let g = up.data()[0] / x.len() as f64;
                vec![Tensor::from_parts(x.shape().to_vec(), vec![g; x.len()])]
            }
            OpKind::Sum => vec![Tensor::from_parts(
                x.shape().to_vec(),
                vec![up.data()[0]; x.len()],
            )],
            OpKind::Transpose => vec![up.transpose()],
            OpKind::SquaredEuclideanPairwise => {
                let y = self.value(inputs[1]);
                let (m, d) = (x.shape()[0], x.shape()[1]);
                let n = y.shape()[0];
                let mut ga = vec![0.0; m * d];
                let mut gb = vec![0.0; n * d];
                for i in 0..m {
                    let a = x.row(i);
                    for j in 0..n {
                        let w = 2.0 * up.data()[i * n + j];
                        if w == 0.0 {
                            continue;
                        }
                        let b = y.row(j);
                        for t in 0..d {
                            let diff = w * (a[t] - b[t]);
                            ga[i * d + t] += diff;
                            gb[j * d + t] -= diff;
                        }
                    }
                }
                vec![
                    Tensor::from_parts(vec![m, d], ga),
                    Tensor::from_parts(vec![n, d], gb),
                ]
            }
            OpKind::SoftmaxCrossEntropy(labels) => {
                let probs = node.cache.as_ref().expect("softmax cache");
                let (m, c) = (x.shape()[0], x.shape()[1]);
                let s = up.data()[0] / m as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (i, &l) in labels.iter().enumerate() {
                    g[i * c + l] -= s;
                }
                vec![Tensor::from_parts(vec![m, c], g)]
            }
            OpKind::LinearSolveSpd => {
                // X = A⁻¹B  ⇒  ∂B = A⁻¹ ∂X (A symmetric),  ∂A = −∂B Xᵀ
                let l = node.cache.as_ref().expect("cholesky cache");
                let n = x.shape()[0];
                let m = up.shape()[1];
                let gb = cholesky_solve(l, up.data(), n, m);
                let xt = node.value.transpose();
                let ga: Vec<f64> = matmul_raw(&gb, xt.data(), n, m, n)
                    .into_iter()
                    .map(|v| -v)
                    .collect();
                vec![
                    Tensor::from_parts(vec![n, n], ga),
                    Tensor::from_parts(vec![n, m], gb),
                ]
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            let data = acc.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
            *acc = Tensor::from_parts(acc.shape().to_vec(), data);
        }
    }
}
