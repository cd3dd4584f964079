use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use super::ops;
use super::{Tensor, TensorError};

/// Index of a node inside its [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Distinguishes trainable parameters from data inputs. Both are bound at
/// evaluation time; the marker only records intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Param,
    Input,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf { name: String, kind: LeafKind },
    Constant(Arc<Tensor>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Atanh(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Clip01(NodeId),
    Sign(NodeId),
    L2Norm(NodeId),
    Reshape(NodeId, Vec<usize>),
    SumLastAxis(NodeId),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Atanh(_) => "atanh",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Clip01(_) => "clip01",
            Op::Sign(_) => "sign",
            Op::L2Norm(_) => "l2_norm",
            Op::Reshape(..) => "reshape",
            Op::SumLastAxis(_) => "sum_last_axis",
        }
    }

    pub(crate) fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } | Op::Constant(_) => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Atanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Clip01(a)
            | Op::Sign(a)
            | Op::L2Norm(a)
            | Op::Reshape(a, _)
            | Op::SumLastAxis(a) => vec![*a],
        }
    }
}

/// Named leaf values supplied to an evaluation.
#[derive(Debug, Default, Clone)]
pub struct Bindings<'a> {
    entries: Vec<(&'a str, &'a Tensor)>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &'a str, value: &'a Tensor) -> Self {
        self.bind(name, value);
        self
    }

    /// Binds `name`, replacing any previous binding.
    pub fn bind(&mut self, name: &'a str, value: &'a Tensor) {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
    }
}

/// An append-only computation graph. Nodes may only reference earlier nodes,
/// so insertion order is a topological order and the graph is acyclic by
/// construction. The most recently added node is the default root.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    leaves: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The last node added.
    pub fn root(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match &self.nodes[id.0] {
            Op::Leaf { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    fn push(&mut self, op: Op) -> NodeId {
        for operand in op.operands() {
            assert!(
                operand.0 < self.nodes.len(),
                "operand {} does not belong to this graph",
                operand.0
            );
        }
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, name: &str, kind: LeafKind) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(Op::Leaf {
            name: name.to_owned(),
            kind,
        });
        self.leaves.insert(name.to_owned(), id);
        id
    }

    /// Declares (or returns the existing) input leaf `name`.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.leaf(name, LeafKind::Input)
    }

    /// Declares (or returns the existing) trainable leaf `name`.
    pub fn param(&mut self, name: &str) -> NodeId {
        self.leaf(name, LeafKind::Param)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(Arc::new(value)))
    }

    /// Embeds a shared tensor without copying it.
    pub fn shared_constant(&mut self, value: Arc<Tensor>) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let c = self.constant(Tensor::scalar(factor));
        self.mul(a, c)
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }

    pub fn atanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Atanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn clip01(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Clip01(a))
    }

    pub fn sign(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sign(a))
    }

    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2Norm(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    /// Sums over the last axis: `[.., n] -> [..]`.
    pub fn sum_last_axis(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumLastAxis(a))
    }

    /// Runs the forward pass over every node, keeping all intermediate values.
    pub fn forward<'a>(&'a self, bindings: &Bindings<'a>) -> Result<Evaluation<'a>, TensorError> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyGraph);
        }
        let mut values: Vec<Cow<'a, Tensor>> = Vec::with_capacity(self.nodes.len());
        for (index, op) in self.nodes.iter().enumerate() {
            let value = match op {
                Op::Leaf { name, .. } => Cow::Borrowed(
                    bindings
                        .get(name)
                        .ok_or_else(|| TensorError::UnboundLeaf(name.clone()))?,
                ),
                Op::Constant(t) => Cow::Borrowed(t.as_ref()),
                _ => Cow::Owned(ops::forward(index, op, &values)?),
            };
            values.push(value);
        }
        Ok(Evaluation {
            graph: self,
            values,
        })
    }

    /// Value of the root node.
    pub fn evaluate(&self, bindings: &Bindings<'_>) -> Result<Tensor, TensorError> {
        let eval = self.forward(bindings)?;
        let root = self.root().ok_or(TensorError::EmptyGraph)?;
        Ok(eval.value(root).clone())
    }

    /// Gradient of the (scalar) root with respect to leaf `wrt`.
    pub fn gradient(&self, wrt: &str, bindings: &Bindings<'_>) -> Result<Tensor, TensorError> {
        let leaf = self
            .leaf_id(wrt)
            .ok_or_else(|| TensorError::UnknownLeaf(wrt.to_owned()))?;
        let root = self.root().ok_or(TensorError::EmptyGraph)?;
        let eval = self.forward(bindings)?;
        Ok(eval.gradients(root, &[leaf])?.remove(0))
    }

    /// Largest per-component relative error between the reverse-mode gradient
    /// and central finite differences with step `step`.
    ///
    /// The relative error of a component is `|a - n| / max(|a|, |n|, 1e-3)`,
    /// so components whose magnitude is below `1e-3` are compared on an
    /// absolute scale of `1e-3`.
    pub fn check_gradient(
        &self,
        wrt: &str,
        bindings: &Bindings<'_>,
        step: f64,
    ) -> Result<f64, TensorError> {
        assert!(step > 0.0, "finite-difference step must be positive");
        let analytic = self.gradient(wrt, bindings)?;
        let base = bindings
            .get(wrt)
            .ok_or_else(|| TensorError::UnboundLeaf(wrt.to_owned()))?;
        let mut probe = base.clone();
        let mut worst: f64 = 0.0;
        for i in 0..probe.len() {
            let original = probe.data()[i];
            probe.data_mut()[i] = original + step;
            let plus = self.evaluate(&bindings.clone().with(wrt, &probe))?.item();
            probe.data_mut()[i] = original - step;
            let minus = self.evaluate(&bindings.clone().with(wrt, &probe))?.item();
            probe.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
        Ok(worst)
    }
}

/// A completed forward pass.
pub struct Evaluation<'a> {
    graph: &'a Graph,
    values: Vec<Cow<'a, Tensor>>,
}

impl<'a> Evaluation<'a> {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }

    /// Reverse accumulation from the scalar `root` to each node in `wrt`.
    ///
    /// Nodes that do not depend on any `wrt` node are skipped entirely.
    pub fn gradients(&self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>, TensorError> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let nodes = &self.graph.nodes;
        let mut needed = vec![false; root.0 + 1];
        for w in wrt {
            if w.0 <= root.0 {
                needed[w.0] = true;
            }
        }
        for i in 0..=root.0 {
            if !needed[i] {
                needed[i] = nodes[i].operands().iter().any(|o| needed[o.0]);
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            if !needed[i] {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let op = &nodes[i];
            let operands = op.operands();
            if operands.is_empty() {
                grads[i] = Some(upstream);
                continue;
            }
            let wanted: Vec<bool> = operands.iter().map(|o| needed[o.0]).collect();
            let contributions = ops::backward(op, &self.values, i, &upstream, &wanted);
            for (operand, contribution) in operands.into_iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                match &mut grads[operand.0] {
                    Some(acc) => {
                        for (x, y) in acc.data_mut().iter_mut().zip(c.data()) {
                            *x += y;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                grads
                    .get_mut(w.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.values[w.0].shape()))
            })
            .collect())
    }
}
