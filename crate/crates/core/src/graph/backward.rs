//! Reverse-mode sweep. The gradient at a fan-out node is the sum of its
//! consumer contributions; a sum node distributes its gradient unchanged
//! to every addend.

use alloc::vec::Vec;

use super::forward::{Aux, Pass};
use super::{node_err, Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{
    batch_norm_backward, conv2d_backward, linear_backward, pool_backward,
    resize_bilinear_backward, Shape, Tensor,
};

/// Gradients of one backward sweep, aligned with `Graph::params()` and
/// `Graph::input_ids()`.
pub struct Grads<T> {
    pub params: Vec<Tensor<T>>,
    pub inputs: Vec<Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn by_name<'g>(&self, graph: &'g Graph<T>, name: &str) -> Option<&Tensor<T>> {
        graph.param_named(name).map(|i| &self.params[i])
    }
}

impl<T: Real> Graph<T> {
    /// Propagate `out_grads` (one per graph output) back to every
    /// parameter and input. Needs the `Pass` produced by forward on the
    /// same feeds.
    pub fn backward(&self, pass: &Pass<T>, out_grads: &[Tensor<T>]) -> Result<Grads<T>> {
        Ok(self.backward_impl(pass, out_grads, false)?.0)
    }

    /// Like `backward`, but also returns the gradient tensor at every
    /// node (None where no gradient flows); the variance probes read
    /// these.
    pub fn backward_full(
        &self,
        pass: &Pass<T>,
        out_grads: &[Tensor<T>],
    ) -> Result<(Grads<T>, Vec<Option<Tensor<T>>>)> {
        let (grads, nodes) = self.backward_impl(pass, out_grads, true)?;
        Ok((grads, nodes))
    }

    fn backward_impl(
        &self,
        pass: &Pass<T>,
        out_grads: &[Tensor<T>],
        keep_nodes: bool,
    ) -> Result<(Grads<T>, Vec<Option<Tensor<T>>>)> {
        if pass.values.len() != self.nodes().len() {
            return Err(Error::MissingCache {
                context: "pass does not match this graph".into(),
            });
        }
        if out_grads.len() != self.output_ids().len() {
            return Err(Error::invalid("one output gradient per graph output required"));
        }

        let mut grads: Vec<Option<Tensor<T>>> = alloc::vec![None; self.nodes().len()];
        for (&out_id, g) in self.output_ids().iter().zip(out_grads) {
            let value_shape = self
                .value_shape(pass, out_id)
                .ok_or_else(|| Error::MissingCache {
                    context: "output value missing from pass".into(),
                })?;
            if g.shape() != value_shape {
                return Err(Error::shape(
                    "output gradient",
                    value_shape.dims(),
                    g.shape().dims(),
                ));
            }
            accumulate(&mut grads, out_id, g.clone());
        }

        for node in self.nodes().iter().rev() {
            let Some(g) = grads[node.id].take() else {
                continue;
            };
            let id = node.id;
            match &node.op {
                Op::Input | Op::Param => {}
                Op::Conv(spec) => {
                    let x = self.operand(pass, node.inputs[0])?;
                    let w = self.operand(pass, node.inputs[1])?;
                    let want_bias = node.inputs.len() > 2;
                    let cg = conv2d_backward(x, spec, w, &g, want_bias)
                        .map_err(|e| node_err(id, e))?;
                    accumulate(&mut grads, node.inputs[0], cg.input);
                    accumulate(&mut grads, node.inputs[1], cg.weight);
                    if let Some(b) = cg.bias {
                        let shape = self.operand(pass, node.inputs[2])?.shape();
                        accumulate(&mut grads, node.inputs[2], Tensor::new(shape, b)?);
                    }
                }
                Op::Linear => {
                    let x = self.operand(pass, node.inputs[0])?;
                    let w = self.operand(pass, node.inputs[1])?;
                    let want_bias = node.inputs.len() > 2;
                    let lg = linear_backward(x, w, &g, want_bias).map_err(|e| node_err(id, e))?;
                    accumulate(&mut grads, node.inputs[0], lg.input);
                    accumulate(&mut grads, node.inputs[1], lg.weight);
                    if let Some(b) = lg.bias {
                        let shape = self.operand(pass, node.inputs[2])?.shape();
                        accumulate(&mut grads, node.inputs[2], Tensor::new(shape, b)?);
                    }
                }
                Op::BatchNorm { .. } => {
                    let x = self.operand(pass, node.inputs[0])?;
                    let gamma = self.operand(pass, node.inputs[1])?;
                    let Aux::Bn(stats) = &pass.aux[id] else {
                        return Err(Error::MissingCache {
                            context: alloc::format!("batch-norm stats for node {id}"),
                        });
                    };
                    let bg = batch_norm_backward(x, gamma.data(), stats, &g)
                        .map_err(|e| node_err(id, e))?;
                    accumulate(&mut grads, node.inputs[0], bg.input);
                    let gshape = gamma.shape();
                    accumulate(&mut grads, node.inputs[1], Tensor::new(gshape, bg.gamma)?);
                    let bshape = self.operand(pass, node.inputs[2])?.shape();
                    accumulate(&mut grads, node.inputs[2], Tensor::new(bshape, bg.beta)?);
                }
                Op::Relu => {
                    let x = self.operand(pass, node.inputs[0])?;
                    // Subgradient at 0 is 0.
                    let dx = x.zip_map(&g, |xv, gv| if xv > T::zero() { gv } else { T::zero() })?;
                    accumulate(&mut grads, node.inputs[0], dx);
                }
                Op::Pool { kind, window, stride } => {
                    let x_shape = self.operand(pass, node.inputs[0])?.shape();
                    let argmax = match &pass.aux[id] {
                        Aux::MaxPool(v) => Some(v.as_slice()),
                        _ => None,
                    };
                    let dx = pool_backward(x_shape, *kind, *window, *stride, &g, argmax)
                        .map_err(|e| node_err(id, e))?;
                    accumulate(&mut grads, node.inputs[0], dx);
                }
                Op::Subsample { .. } | Op::ResizeLike => {
                    let x_shape = self.operand(pass, node.inputs[0])?.shape();
                    let dx = resize_bilinear_backward(x_shape, &g).map_err(|e| node_err(id, e))?;
                    accumulate(&mut grads, node.inputs[0], dx);
                    // ResizeLike's reference fixes the output size only; no
                    // gradient flows to it.
                }
                Op::Add => {
                    for &src in &node.inputs {
                        accumulate(&mut grads, src, g.clone());
                    }
                }
                Op::Concat => {
                    let mut c_off = 0;
                    for &src in &node.inputs {
                        let s = self.operand(pass, src)?.shape();
                        let mut part = Tensor::zeros(s);
                        for n_i in 0..s.n {
                            for c_i in 0..s.c {
                                part.plane_mut(n_i, c_i)
                                    .copy_from_slice(g.plane(n_i, c_off + c_i));
                            }
                        }
                        c_off += s.c;
                        accumulate(&mut grads, src, part);
                    }
                }
                Op::PadChannels { .. } => {
                    let s = self.operand(pass, node.inputs[0])?.shape();
                    let dx = g.narrow_channels(s.c).map_err(|e| node_err(id, e))?;
                    accumulate(&mut grads, node.inputs[0], dx);
                }
            }
            if keep_nodes || matches!(node.op, Op::Input | Op::Param) {
                grads[id] = Some(g);
            }
        }

        let params = self
            .params()
            .iter()
            .map(|p| {
                let g = if keep_nodes {
                    grads[p.node].clone()
                } else {
                    grads[p.node].take()
                };
                g.unwrap_or_else(|| Tensor::zeros(p.shape))
            })
            .collect();
        let inputs = self
            .input_ids()
            .iter()
            .map(|&id| {
                let g = if keep_nodes {
                    grads[id].clone()
                } else {
                    grads[id].take()
                };
                g.unwrap_or_else(|| {
                    Tensor::zeros(self.value_shape(pass, id).unwrap_or(Shape::new(1, 1, 1, 1)))
                })
            })
            .collect();
        let nodes = if keep_nodes { grads } else { Vec::new() };
        Ok((Grads { params, inputs }, nodes))
    }

    fn operand<'a>(&'a self, pass: &'a Pass<T>, id: NodeId) -> Result<&'a Tensor<T>> {
        if let Some(p) = self.param_of_node(id) {
            return Ok(&self.param_values()[p]);
        }
        pass.value(id).ok_or(Error::MissingCache {
            context: alloc::format!("activation of node {id}"),
        })
    }

    fn value_shape(&self, pass: &Pass<T>, id: NodeId) -> Option<Shape> {
        if let Some(p) = self.param_of_node(id) {
            return Some(self.params()[p].shape);
        }
        pass.value(id).map(|t| t.shape())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id] {
        Some(acc) => acc.add_scaled(&g, T::one()),
        slot @ None => *slot = Some(g),
    }
}
