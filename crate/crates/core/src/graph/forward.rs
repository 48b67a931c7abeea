//! Graph evaluation. Every node runs once in insertion (= topological)
//! order; activations are cached per call so concurrent passes never
//! alias.

use alloc::vec::Vec;

use super::{node_err, Graph, Node, NodeId, Op};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{
    batch_norm, conv2d, fractional_subsample, linear, pool, resize_bilinear, BnBatchStats, BnMode,
    RunningStats, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-node auxiliary state a backward pass needs.
#[derive(Debug, Clone)]
pub(crate) enum Aux<T> {
    None,
    MaxPool(Vec<u32>),
    Bn(BnBatchStats<T>),
}

/// Activation cache of one forward call.
#[derive(Debug)]
pub struct Pass<T> {
    pub(crate) values: Vec<Option<Tensor<T>>>,
    pub(crate) aux: Vec<Aux<T>>,
    pub(crate) mode: Mode,
}

impl<T: Real> Pass<T> {
    /// Cached activation of a node (`None` for params and unvisited nodes).
    pub fn value(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.values.get(id).and_then(|v| v.as_ref())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl<T: Real> Graph<T> {
    /// Evaluate all outputs. Pure: batch-norm running statistics are read
    /// (eval mode) but never written. Returns the full activation cache.
    pub fn forward(&self, feeds: &[Tensor<T>], mode: Mode) -> Result<Pass<T>> {
        run(
            &self.nodes,
            &self.inputs,
            |id| self.param_of_node(id).map(|i| &self.param_values[i]),
            &self.bn_running,
            None,
            feeds,
            mode,
        )
    }

    /// Train-mode forward that also advances the batch-norm running
    /// statistics; the one impure entry point.
    pub fn forward_train(&mut self, feeds: &[Tensor<T>]) -> Result<Pass<T>> {
        let nodes = &self.nodes;
        let inputs = &self.inputs;
        let params = &self.param_values;
        let param_index = &self.param_index;
        let bn = &mut self.bn_running;
        run(
            nodes,
            inputs,
            |id| param_index.get(&id).map(|&i| &params[i]),
            &alloc::collections::BTreeMap::new(),
            Some(bn),
            feeds,
            Mode::Train,
        )
    }

    /// Outputs of a pass, in `output_ids` order.
    pub fn outputs_of<'p>(&self, pass: &'p Pass<T>) -> Vec<&'p Tensor<T>> {
        self.outputs
            .iter()
            .map(|&id| pass.value(id).expect("output not evaluated"))
            .collect()
    }
}

fn run<'g, T: Real>(
    nodes: &[Node],
    input_ids: &[NodeId],
    param_value: impl Fn(NodeId) -> Option<&'g Tensor<T>>,
    bn_read: &alloc::collections::BTreeMap<NodeId, RunningStats<T>>,
    mut bn_write: Option<&mut alloc::collections::BTreeMap<NodeId, RunningStats<T>>>,
    feeds: &[Tensor<T>],
    mode: Mode,
) -> Result<Pass<T>>
where
    T: 'g,
{
    if feeds.len() != input_ids.len() {
        let missing = input_ids.get(feeds.len()).copied().unwrap_or(0);
        return Err(Error::UnboundInput { node: missing });
    }
    let mut values: Vec<Option<Tensor<T>>> = alloc::vec![None; nodes.len()];
    let mut aux: Vec<Aux<T>> = Vec::with_capacity(nodes.len());
    for _ in 0..nodes.len() {
        aux.push(Aux::None);
    }

    for node in nodes {
        let id = node.id;
        // Params are read straight from the graph; everything else from the cache.
        macro_rules! val {
            ($i:expr) => {{
                let src = node.inputs[$i];
                match param_value(src) {
                    Some(t) => t,
                    None => values[src].as_ref().ok_or(Error::Node {
                        node: id,
                        message: alloc::string::String::from("operand not evaluated"),
                    })?,
                }
            }};
        }

        let out = match &node.op {
            Op::Input => {
                let pos = input_ids.iter().position(|&i| i == id).unwrap();
                Some(feeds[pos].clone())
            }
            Op::Param => None,
            Op::Conv(spec) => {
                let x = val!(0);
                let w = val!(1);
                let bias = if node.inputs.len() > 2 {
                    Some(val!(2).data().to_vec())
                } else {
                    None
                };
                Some(conv2d(x, spec, w, bias.as_deref()).map_err(|e| node_err(id, e))?)
            }
            Op::Linear => {
                let x = val!(0);
                let w = val!(1);
                let bias = if node.inputs.len() > 2 {
                    Some(val!(2).data().to_vec())
                } else {
                    None
                };
                Some(linear(x, w, bias.as_deref()).map_err(|e| node_err(id, e))?)
            }
            Op::BatchNorm { eps, momentum } => {
                let x = val!(0);
                let gamma = val!(1).data().to_vec();
                let beta = val!(2).data().to_vec();
                let channels = x.shape().c;
                let bn_mode = match mode {
                    Mode::Train => BnMode::Train,
                    Mode::Eval => BnMode::Eval,
                };
                let (y, stats) = match (&mut bn_write, bn_mode) {
                    (Some(map), BnMode::Train) => {
                        let entry = map
                            .entry(id)
                            .or_insert_with(|| RunningStats::new(channels));
                        if entry.mean.len() != channels {
                            *entry = RunningStats::new(channels);
                        }
                        batch_norm(
                            x,
                            &gamma,
                            &beta,
                            T::from_f64(*eps),
                            BnMode::Train,
                            Some(entry),
                            T::from_f64(*momentum),
                        )
                    }
                    (None, BnMode::Train) => batch_norm(
                        x,
                        &gamma,
                        &beta,
                        T::from_f64(*eps),
                        BnMode::Train,
                        None,
                        T::from_f64(*momentum),
                    ),
                    (_, BnMode::Eval) => {
                        let mut stats = bn_read
                            .get(&id)
                            .cloned()
                            .ok_or_else(|| Error::MissingCache {
                                context: alloc::format!("running stats for bn node {id}"),
                            })?;
                        if stats.mean.len() != channels {
                            return Err(node_err(
                                id,
                                Error::invalid("eval before any train step sized the running stats"),
                            ));
                        }
                        batch_norm(
                            x,
                            &gamma,
                            &beta,
                            T::from_f64(*eps),
                            BnMode::Eval,
                            Some(&mut stats),
                            T::from_f64(*momentum),
                        )
                    }
                }
                .map_err(|e| node_err(id, e))?;
                aux[id] = Aux::Bn(stats);
                Some(y)
            }
            Op::Relu => Some(val!(0).relu()),
            Op::Pool { kind, window, stride } => {
                let (y, argmax) = pool(val!(0), *kind, *window, *stride).map_err(|e| node_err(id, e))?;
                if let Some(am) = argmax {
                    aux[id] = Aux::MaxPool(am);
                }
                Some(y)
            }
            Op::Subsample { ratio } => {
                Some(fractional_subsample(val!(0), *ratio).map_err(|e| node_err(id, e))?)
            }
            Op::ResizeLike => {
                let reference = val!(1).shape();
                Some(resize_bilinear(val!(0), reference.h, reference.w).map_err(|e| node_err(id, e))?)
            }
            Op::Add => {
                let mut acc = val!(0).clone();
                for i in 1..node.inputs.len() {
                    let t = val!(i);
                    if t.shape() != acc.shape() {
                        return Err(node_err(
                            id,
                            Error::shape("sum operand", acc.shape().dims(), t.shape().dims()),
                        ));
                    }
                    acc.add_scaled(t, T::one());
                }
                Some(acc)
            }
            Op::Concat => {
                let parts: Vec<&Tensor<T>> = (0..node.inputs.len())
                    .map(|i| -> Result<&Tensor<T>> { Ok(val!(i)) })
                    .collect::<Result<_>>()?;
                Some(Tensor::concat_channels(&parts).map_err(|e| node_err(id, e))?)
            }
            Op::PadChannels { to } => Some(val!(0).pad_channels(*to).map_err(|e| node_err(id, e))?),
        };
        values[id] = out;
    }

    Ok(Pass { values, aux, mode })
}
