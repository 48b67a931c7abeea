//! Branch-degree bookkeeping: how many summed branches feed a weight
//! layer (C_i) and how many branches consume its output (C_o), plus the
//! per-branch element counts (n_i, n_o) the initialization formulas use.

use alloc::vec::Vec;

use super::{Graph, NodeId, Op};
use crate::real::Real;

/// Per-node degrees. For conv/linear nodes these are the layer-level
/// walked values; for a sum node C_i is its addend count; elsewhere 1.
/// C_o is the consumer count (walked through pass-through ops for weight
/// layers, structural otherwise), floored at 1 for terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchDegrees {
    pub c_in: usize,
    pub c_out: usize,
}

/// Fan geometry of one weight layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerFan {
    pub c_in: usize,
    pub n_in: usize,
    pub c_out: usize,
    pub n_out: usize,
}

/// Ops that forward one data stream without mixing branches; the degree
/// walks look through them.
fn passes_through(op: &Op) -> bool {
    matches!(
        op,
        Op::Relu
            | Op::BatchNorm { .. }
            | Op::Pool { .. }
            | Op::Subsample { .. }
            | Op::ResizeLike
            | Op::PadChannels { .. }
    )
}

fn is_weight_layer(op: &Op) -> bool {
    matches!(op, Op::Conv(_) | Op::Linear)
}

impl<T: Real> Graph<T> {
    /// C_i of a weight layer: walk up from its data input through
    /// pass-through ops; a sum merge contributes its addend count,
    /// anything else is a single branch. Concatenation does not raise
    /// C_i (it widens n_i instead).
    pub fn layer_in_branches(&self, layer: NodeId) -> usize {
        let mut cur = self.node(layer).inputs[0];
        loop {
            match &self.node(cur).op {
                Op::Add => return self.node(cur).inputs.len(),
                op if passes_through(op) => cur = self.node(cur).inputs[0],
                _ => return 1,
            }
        }
    }

    /// C_o of a weight layer: walk down through single-consumer chains of
    /// pass-through ops and sum merges (a sum hands the gradient through
    /// unchanged), then count the branches that consume the result.
    pub fn layer_out_branches(&self, layer: NodeId) -> usize {
        let consumers = self.consumers();
        let mut cur = layer;
        loop {
            // Only data edges count: an edge into ResizeLike's reference
            // slot or into a weight/bias slot is not a consumer branch.
            let edges: Vec<NodeId> = consumers[cur]
                .iter()
                .filter(|(consumer, pos)| match &self.node(*consumer).op {
                    Op::Conv(_) | Op::Linear | Op::BatchNorm { .. } | Op::ResizeLike => *pos == 0,
                    _ => true,
                })
                .map(|(c, _)| *c)
                .collect();
            if edges.len() == 1 {
                let next = edges[0];
                let op = &self.node(next).op;
                if passes_through(op) || matches!(op, Op::Add | Op::Concat) {
                    cur = next;
                    continue;
                }
                return 1;
            }
            return edges.len().max(1);
        }
    }

    /// Per-node (C_i, C_o) for the whole graph.
    pub fn branch_degrees(&self) -> Vec<BranchDegrees> {
        let consumers = self.consumers();
        self.nodes()
            .iter()
            .map(|node| {
                if is_weight_layer(&node.op) {
                    BranchDegrees {
                        c_in: self.layer_in_branches(node.id),
                        c_out: self.layer_out_branches(node.id),
                    }
                } else {
                    BranchDegrees {
                        c_in: match node.op {
                            Op::Add => node.inputs.len(),
                            _ => 1,
                        },
                        c_out: consumers[node.id].len().max(1),
                    }
                }
            })
            .collect()
    }
}

/// Fan-in/fan-out element counts of a weight layer together with its
/// branch degrees. For a convolution n_i = in_ch·kH·kW and
/// n_o = out_ch·kH·kW; for a linear layer the feature counts.
pub fn layer_fan<T: Real>(graph: &Graph<T>, layer: NodeId) -> Option<LayerFan> {
    let (n_in, n_out) = match &graph.node(layer).op {
        Op::Conv(spec) => (spec.in_ch * spec.kh * spec.kw, spec.out_ch * spec.kh * spec.kw),
        Op::Linear => {
            let w = graph.param_of_node(graph.node(layer).inputs[1])?;
            let shape = graph.params()[w].shape;
            (shape.c, shape.n)
        }
        _ => return None,
    };
    Some(LayerFan {
        c_in: graph.layer_in_branches(layer),
        n_in,
        c_out: graph.layer_out_branches(layer),
        n_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ParamKind;
    use crate::tensor::Shape;

    fn linear_node(g: &mut Graph<f64>, x: NodeId, name: &str, dim: usize) -> NodeId {
        let w = g.param(name, Shape::new(dim, dim, 1, 1), ParamKind::LinearWeight);
        g.linear(x, w, None)
    }

    #[test]
    fn plain_chain_is_all_ones() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let l1 = linear_node(&mut g, x, "w1", 4);
        let r1 = g.relu(l1);
        let l2 = linear_node(&mut g, r1, "w2", 4);
        g.mark_output(l2);
        for node in [l1, l2] {
            assert_eq!(g.layer_in_branches(node), 1);
            assert_eq!(g.layer_out_branches(node), 1);
        }
    }

    #[test]
    fn sum_of_three_branches_gives_ci_three() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let a = linear_node(&mut g, x, "wa", 4);
        let b = linear_node(&mut g, x, "wb", 4);
        let c = linear_node(&mut g, x, "wc", 4);
        let s = g.add(&[a, b, c]);
        let r = g.relu(s);
        let l = linear_node(&mut g, r, "w", 4);
        g.mark_output(l);
        assert_eq!(g.layer_in_branches(l), 3);
        // x feeds three weight layers directly.
        assert_eq!(g.branch_degrees()[x].c_out, 3);
    }

    #[test]
    fn fan_out_four_gives_co_four() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let l = linear_node(&mut g, x, "w", 4);
        let r = g.relu(l);
        for i in 0..4 {
            let c = linear_node(&mut g, r, &alloc::format!("w{i}"), 4);
            g.mark_output(c);
        }
        assert_eq!(g.layer_out_branches(l), 4);
    }

    #[test]
    fn co_walks_through_sum_merges() {
        // a and b sum; the sum feeds two next-level layers. Each producing
        // layer sees both consumers through the merge.
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let a = linear_node(&mut g, x, "wa", 4);
        let ra = g.relu(a);
        let b = linear_node(&mut g, x, "wb", 4);
        let rb = g.relu(b);
        let s = g.add(&[ra, rb]);
        let n1 = linear_node(&mut g, s, "n1", 4);
        let n2 = linear_node(&mut g, s, "n2", 4);
        g.mark_output(n1);
        g.mark_output(n2);
        assert_eq!(g.layer_out_branches(a), 2);
        assert_eq!(g.layer_in_branches(n1), 2);
        assert_eq!(g.layer_out_branches(n1), 1);
    }

    #[test]
    fn concat_does_not_raise_ci() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let a = g.relu(x);
        let b = g.relu(x);
        let cat = g.concat(&[a, b]);
        let w = g.param("w", Shape::new(4, 8, 1, 1), ParamKind::LinearWeight);
        let l = g.linear(cat, w, None);
        g.mark_output(l);
        assert_eq!(g.layer_in_branches(l), 1);
        assert_eq!(layer_fan(&g, l).unwrap().n_in, 8);
    }

    #[test]
    fn resize_reference_edge_is_not_a_consumer_branch() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let skip = linear_node(&mut g, x, "ws", 4);
        // skip used both as data for the output sum and as the size
        // reference of a resize.
        let branch = linear_node(&mut g, x, "wb", 4);
        let rz = g.resize_like(branch, skip);
        let s = g.add(&[skip, rz]);
        g.mark_output(s);
        assert_eq!(g.layer_out_branches(skip), 1);
    }
}
