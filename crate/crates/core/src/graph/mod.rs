//! Explicit computation DAG with reverse-mode differentiation and
//! per-node branch-degree bookkeeping.
//!
//! Nodes are appended in construction order and may only reference
//! earlier nodes, so insertion order is a deterministic topological
//! order. Structure is immutable once built; the only mutable state a
//! graph carries is its parameter values and the batch-norm running
//! statistics, both updated under exclusive access.

mod backward;
mod degrees;
mod forward;
mod gradcheck;

pub use backward::Grads;
pub use degrees::{layer_fan, BranchDegrees, LayerFan};
pub use forward::{Mode, Pass};
pub use gradcheck::grad_check;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{ConvSpec, PoolKind, RunningStats, Shape, Tensor};

pub type NodeId = usize;

/// Operator kind plus its spec. Input conventions:
/// `Conv`/`Linear`: `[x, weight]` or `[x, weight, bias]`;
/// `BatchNorm`: `[x, gamma, beta]`; `ResizeLike`: `[x, reference]`
/// (the reference only fixes the output size, no gradient flows to it);
/// `Add`/`Concat` take any number of inputs; everything else is unary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Op {
    Input,
    Param,
    Conv(ConvSpec),
    Linear,
    BatchNorm { eps: f64, momentum: f64 },
    Relu,
    Pool {
        kind: PoolKind,
        window: (usize, usize),
        stride: (usize, usize),
    },
    Subsample { ratio: f64 },
    ResizeLike,
    Add,
    Concat,
    PadChannels { to: usize },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

/// What a parameter leaf is for; initialization dispatches on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    BnGamma,
    BnBeta,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamInfo {
    pub node: NodeId,
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    params: Vec<ParamInfo>,
    param_values: Vec<Tensor<T>>,
    param_index: BTreeMap<NodeId, usize>,
    bn_running: BTreeMap<NodeId, RunningStats<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            params: Vec::new(),
            param_values: Vec::new(),
            param_index: BTreeMap::new(),
            bn_running: BTreeMap::new(),
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len();
        for &i in &inputs {
            debug_assert!(i < id, "graph inputs must reference earlier nodes");
        }
        self.nodes.push(Node { id, op, inputs });
        id
    }

    pub fn input(&mut self) -> NodeId {
        let id = self.push(Op::Input, Vec::new());
        self.inputs.push(id);
        id
    }

    /// New parameter leaf, initialized to zeros until `apply_init` or an
    /// explicit store.
    pub fn param(&mut self, name: impl Into<String>, shape: Shape, kind: ParamKind) -> NodeId {
        let id = self.push(Op::Param, Vec::new());
        self.param_index.insert(id, self.params.len());
        self.params.push(ParamInfo {
            node: id,
            name: name.into(),
            shape,
            kind,
        });
        self.param_values.push(Tensor::zeros(shape));
        id
    }

    pub fn conv(&mut self, x: NodeId, spec: ConvSpec, weight: NodeId, bias: Option<NodeId>) -> NodeId {
        let mut inputs = alloc::vec![x, weight];
        inputs.extend(bias);
        self.push(Op::Conv(spec), inputs)
    }

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: Option<NodeId>) -> NodeId {
        let mut inputs = alloc::vec![x, weight];
        inputs.extend(bias);
        self.push(Op::Linear, inputs)
    }

    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64, momentum: f64) -> NodeId {
        let id = self.push(Op::BatchNorm { eps, momentum }, alloc::vec![x, gamma, beta]);
        // Channel count is only known at execution; insert lazily sized stats
        // on first update. Start with an empty slot marker.
        self.bn_running.insert(id, RunningStats::new(1));
        id
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, alloc::vec![x])
    }

    pub fn pool(&mut self, x: NodeId, kind: PoolKind, window: (usize, usize), stride: (usize, usize)) -> NodeId {
        self.push(Op::Pool { kind, window, stride }, alloc::vec![x])
    }

    pub fn subsample(&mut self, x: NodeId, ratio: f64) -> NodeId {
        self.push(Op::Subsample { ratio }, alloc::vec![x])
    }

    pub fn resize_like(&mut self, x: NodeId, reference: NodeId) -> NodeId {
        self.push(Op::ResizeLike, alloc::vec![x, reference])
    }

    pub fn add(&mut self, parts: &[NodeId]) -> NodeId {
        debug_assert!(!parts.is_empty());
        self.push(Op::Add, parts.to_vec())
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        debug_assert!(!parts.is_empty());
        self.push(Op::Concat, parts.to_vec())
    }

    pub fn pad_channels(&mut self, x: NodeId, to: usize) -> NodeId {
        self.push(Op::PadChannels { to }, alloc::vec![x])
    }

    pub fn mark_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn input_ids(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn output_ids(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn param_values(&self) -> &[Tensor<T>] {
        &self.param_values
    }

    pub fn param_values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.param_values
    }

    pub fn param_of_node(&self, node: NodeId) -> Option<usize> {
        self.param_index.get(&node).copied()
    }

    pub fn param_named(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set_param(&mut self, idx: usize, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.params[idx].shape {
            return Err(Error::shape(
                "set_param",
                self.params[idx].shape.dims(),
                value.shape().dims(),
            ));
        }
        self.param_values[idx] = value;
        Ok(())
    }

    pub fn bn_running(&self) -> &BTreeMap<NodeId, RunningStats<T>> {
        &self.bn_running
    }

    pub fn bn_running_mut(&mut self) -> &mut BTreeMap<NodeId, RunningStats<T>> {
        &mut self.bn_running
    }

    /// Consumer edges of every node, recomputed from the edge list.
    pub fn consumers(&self) -> Vec<Vec<(NodeId, usize)>> {
        let mut out = alloc::vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            for (pos, &src) in node.inputs.iter().enumerate() {
                out[src].push((node.id, pos));
            }
        }
        out
    }

    /// Number of consumer edges of a node (the structural fan-out).
    pub fn fan_out(&self, id: NodeId) -> usize {
        self.nodes
            .iter()
            .map(|n| n.inputs.iter().filter(|&&i| i == id).count())
            .sum()
    }

    /// Static shape inference from input shapes; mirrors forward and is
    /// what the FLOP counter walks.
    pub fn infer_shapes(&self, input_shapes: &[Shape]) -> Result<Vec<Shape>> {
        if input_shapes.len() != self.inputs.len() {
            return Err(Error::invalid("infer_shapes: wrong number of input shapes"));
        }
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let get = |id: NodeId| shapes[id];
            let shape = match &node.op {
                Op::Input => {
                    let pos = self.inputs.iter().position(|&i| i == node.id).unwrap();
                    input_shapes[pos]
                }
                Op::Param => self.params[self.param_index[&node.id]].shape,
                Op::Conv(spec) => spec
                    .out_shape(get(node.inputs[0]))
                    .map_err(|e| node_err(node.id, e))?,
                Op::Linear => {
                    let x = get(node.inputs[0]);
                    let w = get(node.inputs[1]);
                    Shape::new(x.n, w.n, 1, 1)
                }
                Op::BatchNorm { .. } | Op::Relu => get(node.inputs[0]),
                Op::Pool { window, stride, .. } => {
                    let s = get(node.inputs[0]);
                    if window.0 > s.h || window.1 > s.w || window.0 == 0 || window.1 == 0 {
                        return Err(node_err(node.id, Error::invalid("pool window out of range")));
                    }
                    Shape::new(
                        s.n,
                        s.c,
                        (s.h - window.0) / stride.0 + 1,
                        (s.w - window.1) / stride.1 + 1,
                    )
                }
                Op::Subsample { ratio } => {
                    let s = get(node.inputs[0]);
                    Shape::new(
                        s.n,
                        s.c,
                        crate::tensor::fractional_size(s.h, *ratio),
                        crate::tensor::fractional_size(s.w, *ratio),
                    )
                }
                Op::ResizeLike => {
                    let s = get(node.inputs[0]);
                    let r = get(node.inputs[1]);
                    Shape::new(s.n, s.c, r.h, r.w)
                }
                Op::Add => get(node.inputs[0]),
                Op::Concat => {
                    let first = get(node.inputs[0]);
                    let c = node.inputs.iter().map(|&i| get(i).c).sum();
                    Shape::new(first.n, c, first.h, first.w)
                }
                Op::PadChannels { to } => {
                    let s = get(node.inputs[0]);
                    Shape::new(s.n, *to, s.h, s.w)
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }
}

pub(crate) fn node_err(id: NodeId, e: Error) -> Error {
    use alloc::string::ToString;
    Error::Node {
        node: id,
        message: e.to_string(),
    }
}
