//! Monte-Carlo measurement of response and gradient variances across
//! graphs. Each trial draws fresh weights and fresh unit-variance inputs
//! from seed-derived streams; statistics pool every element of every
//! trial (batch x channels x spatial x trials), matching the
//! element-level i.i.d. model of the derivations being probed.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{Graph, Mode, NodeId, Op};
use crate::init::{apply_init, InitScheme};
use crate::prm::{build_residual_branch, build_residual_unit, bn_relu, conv_weight,
    ResidualUnitConfig};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::tensor::{ConvSpec, Shape, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceEntry {
    pub node: usize,
    /// Weight layers on the longest input path; a chain's layer index.
    pub depth: usize,
    pub kind: String,
    /// Pooled element count: batch x channels x spatial x trials.
    pub samples: u64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VarianceTrace {
    pub trials: usize,
    pub seed: u64,
    /// Measured ReLU second-moment factor E[relu(x)^2]/Var[x], pooled
    /// over every ReLU in the graph; None when the graph has no ReLU.
    pub relu_alpha: Option<f64>,
    pub entries: Vec<TraceEntry>,
}

impl VarianceTrace {
    pub fn entry(&self, node: NodeId) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.node == node)
    }
}

#[derive(Clone, Copy, Default)]
struct OnlineStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl OnlineStats {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

fn op_kind(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param => "param",
        Op::Conv(_) => "conv",
        Op::Linear => "linear",
        Op::BatchNorm { .. } => "bn",
        Op::Relu => "relu",
        Op::Pool { .. } => "pool",
        Op::Subsample { .. } => "subsample",
        Op::ResizeLike => "resize",
        Op::Add => "add",
        Op::Concat => "concat",
        Op::PadChannels { .. } => "pad",
    }
}

/// Depth index per node: number of weight layers on the longest path
/// from any input.
pub fn node_depths<T: Real>(g: &Graph<T>) -> Vec<usize> {
    let mut depth = alloc::vec![0usize; g.nodes().len()];
    for node in g.nodes() {
        let base = node.inputs.iter().map(|&i| depth[i]).max().unwrap_or(0);
        let own = matches!(node.op, Op::Conv(_) | Op::Linear) as usize;
        depth[node.id] = base + own;
    }
    depth
}

fn gaussian_feeds<T: Real>(shapes: &[Shape], seed: u64) -> Vec<Tensor<T>> {
    let mut rng = rng_from_seed(seed);
    shapes
        .iter()
        .map(|&s| Tensor::from_fn(s, |_, _, _, _| standard_normal(&mut rng)))
        .collect()
}

fn finish<T: Real>(
    g: &Graph<T>,
    stats: Vec<OnlineStats>,
    trials: usize,
    seed: u64,
    relu_in: OnlineStats,
    relu_out_sq: f64,
    relu_n: u64,
) -> VarianceTrace {
    let depths = node_depths(g);
    let entries = g
        .nodes()
        .iter()
        .filter(|n| stats[n.id].count > 0)
        .map(|n| TraceEntry {
            node: n.id,
            depth: depths[n.id],
            kind: op_kind(&n.op).into(),
            samples: stats[n.id].count,
            mean: stats[n.id].mean,
            variance: stats[n.id].variance(),
        })
        .collect();
    let relu_alpha = (relu_n > 0).then(|| {
        let second_moment = relu_out_sq / relu_n as f64;
        second_moment / relu_in.variance()
    });
    VarianceTrace {
        trials,
        seed,
        relu_alpha,
        entries,
    }
}

/// Re-initialize per trial, feed unit-variance noise, and record every
/// node's activation statistics.
pub fn probe_forward_variance<T: Real>(
    graph: &mut Graph<T>,
    scheme: &InitScheme,
    input_shapes: &[Shape],
    trials: usize,
    seed: u64,
) -> Result<VarianceTrace> {
    let mut stats = alloc::vec![OnlineStats::default(); graph.nodes().len()];
    let mut relu_in = OnlineStats::default();
    let mut relu_out_sq = 0.0;
    let mut relu_n = 0u64;
    for t in 0..trials {
        apply_init(graph, scheme, derive_seed(seed, &alloc::format!("init/{t}")))?;
        let feeds = gaussian_feeds(input_shapes, derive_seed(seed, &alloc::format!("input/{t}")));
        let pass = graph.forward(&feeds, Mode::Train)?;
        for node in graph.nodes() {
            if let Some(v) = pass.value(node.id) {
                for &x in v.data() {
                    stats[node.id].push(x.to_f64());
                }
                if matches!(node.op, Op::Relu) {
                    if let Some(input_v) = pass.value(node.inputs[0]) {
                        for &x in input_v.data() {
                            relu_in.push(x.to_f64());
                        }
                    }
                    for &y in v.data() {
                        let y = y.to_f64();
                        relu_out_sq += y * y;
                        relu_n += 1;
                    }
                }
            }
        }
    }
    Ok(finish(graph, stats, trials, seed, relu_in, relu_out_sq, relu_n))
}

/// As the forward probe, but records per-node gradient statistics from
/// unit-variance gradients fed at every output.
pub fn probe_backward_variance<T: Real>(
    graph: &mut Graph<T>,
    scheme: &InitScheme,
    input_shapes: &[Shape],
    trials: usize,
    seed: u64,
) -> Result<VarianceTrace> {
    let mut stats = alloc::vec![OnlineStats::default(); graph.nodes().len()];
    for t in 0..trials {
        apply_init(graph, scheme, derive_seed(seed, &alloc::format!("init/{t}")))?;
        let feeds = gaussian_feeds(input_shapes, derive_seed(seed, &alloc::format!("input/{t}")));
        let pass = graph.forward(&feeds, Mode::Train)?;
        let out_shapes: Vec<Shape> = graph
            .outputs_of(&pass)
            .iter()
            .map(|v| v.shape())
            .collect();
        let out_grads =
            gaussian_feeds(&out_shapes, derive_seed(seed, &alloc::format!("outgrad/{t}")));
        let (_, node_grads) = graph.backward_full(&pass, &out_grads)?;
        for (id, grad) in node_grads.iter().enumerate() {
            if let Some(gv) = grad {
                for &x in gv.data() {
                    stats[id].push(x.to_f64());
                }
            }
        }
    }
    Ok(finish(
        graph,
        stats,
        trials,
        seed,
        OnlineStats::default(),
        0.0,
        0,
    ))
}

/// The multi-branch chain of the initialization analysis: `layers`
/// levels, each with `branches` parallel linear maps whose (zero-mean)
/// responses are summed before a shared ReLU. Summing pre-activations
/// keeps the branch values uncorrelated, which is exactly the i.i.d.
/// setting of the variance recursion
/// `Var[y^(l)] = alpha C_i n_i Var[w] Var[y^(l-1)]`.
pub struct BranchChain<T> {
    pub graph: Graph<T>,
    /// Per-level post-activation nodes; index 0 is the input.
    pub levels: Vec<NodeId>,
    /// The summed layer response y^(l) per level, where the recursion is
    /// stated.
    pub responses: Vec<NodeId>,
}

pub fn build_branch_chain<T: Real>(layers: usize, branches: usize, width: usize) -> BranchChain<T> {
    let mut g: Graph<T> = Graph::new();
    let x = g.input();
    let mut levels = alloc::vec![x];
    let mut responses = Vec::with_capacity(layers);
    let mut cur = x;
    for l in 0..layers {
        let mut outs = Vec::with_capacity(branches);
        for b in 0..branches {
            let w = g.param(
                alloc::format!("l{l}.b{b}.w"),
                Shape::new(width, width, 1, 1),
                crate::graph::ParamKind::LinearWeight,
            );
            outs.push(g.linear(cur, w, None));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.add(&outs) };
        responses.push(merged);
        cur = g.relu(merged);
        levels.push(cur);
    }
    g.mark_output(cur);
    BranchChain {
        graph: g,
        levels,
        responses,
    }
}

/// Chain of `units` residual units (16 channels, 8x8 activations).
/// Units listed in `reset_at` (1-based) get their identity skip replaced
/// by the BN-ReLU-Conv1x1 reset block. Entries are reported for the unit
/// outputs only, with depth = unit index.
pub fn simulate_residual_chain<T: Real>(
    units: usize,
    reset_at: &[usize],
    trials: usize,
    seed: u64,
) -> Result<VarianceTrace> {
    let channels = 16;
    let cfg = ResidualUnitConfig::with_channels(channels, channels);
    let mut g: Graph<T> = Graph::new();
    let x = g.input();
    let mut unit_outputs = alloc::vec![x];
    let mut cur = x;
    for u in 1..=units {
        let prefix = alloc::format!("u{u}");
        if reset_at.contains(&u) {
            let branch = build_residual_branch(&mut g, cur, &cfg, &prefix);
            let pre = bn_relu(&mut g, cur, &alloc::format!("{prefix}.reset"), channels);
            let spec = ConvSpec::pointwise(channels, channels);
            let w = conv_weight(&mut g, alloc::format!("{prefix}.reset.w"), spec);
            let skip = g.conv(pre, spec, w, None);
            cur = g.add(&[skip, branch]);
        } else {
            cur = build_residual_unit(&mut g, cur, &cfg, &prefix);
        }
        unit_outputs.push(cur);
    }
    g.mark_output(cur);

    let scheme = InitScheme::msr(0.5);
    let trace = probe_forward_variance(
        &mut g,
        &scheme,
        &[Shape::new(16, channels, 8, 8)],
        trials,
        seed,
    )?;
    let entries = unit_outputs
        .iter()
        .enumerate()
        .filter_map(|(depth, &id)| {
            trace.entry(id).map(|e| TraceEntry {
                depth,
                ..e.clone()
            })
        })
        .collect();
    Ok(VarianceTrace {
        trials,
        seed,
        relu_alpha: trace.relu_alpha,
        entries,
    })
}

/// Two residual units on independent unit-variance inputs, summed.
/// Returns (variance of the sum, mean single-branch variance).
pub fn simulate_branch_sum(trials: usize, seed: u64) -> Result<(f64, f64)> {
    let channels = 16;
    let cfg = ResidualUnitConfig::with_channels(channels, channels);
    let mut g: Graph<f64> = Graph::new();
    let x1 = g.input();
    let x2 = g.input();
    let b1 = build_residual_unit(&mut g, x1, &cfg, "a");
    let b2 = build_residual_unit(&mut g, x2, &cfg, "b");
    let sum = g.add(&[b1, b2]);
    g.mark_output(sum);

    let shape = Shape::new(16, channels, 8, 8);
    let trace = probe_forward_variance(
        &mut g,
        &InitScheme::msr(0.5),
        &[shape, shape],
        trials,
        seed,
    )?;
    let vs = trace.entry(sum).map(|e| e.variance).unwrap_or(0.0);
    let v1 = trace.entry(b1).map(|e| e.variance).unwrap_or(0.0);
    let v2 = trace.entry(b2).map(|e| e.variance).unwrap_or(0.0);
    Ok((vs, 0.5 * (v1 + v2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Compromise;

    #[test]
    fn single_linear_layer_preserves_variance_under_forward_condition() {
        // alpha = 1 (no activation), C_i = C_o = 1: Var[w] = 1/n keeps
        // Var[y] = Var[x].
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let w = g.param(
            "w",
            Shape::new(64, 64, 1, 1),
            crate::graph::ParamKind::LinearWeight,
        );
        let y = g.linear(x, w, None);
        g.mark_output(y);
        let scheme = InitScheme::branch_aware(1.0, Compromise::Balanced);
        let trace =
            probe_forward_variance(&mut g, &scheme, &[Shape::new(128, 64, 1, 1)], 100, 3).unwrap();
        let vy = trace.entry(y).unwrap().variance;
        assert!((0.8..1.25).contains(&vy), "Var[y] = {vy}");
    }

    #[test]
    fn eq9_analytic_ratio_for_single_layer() {
        // Var[y] = C_i n_i Var[w] Var[x] for a linear layer on zero-mean
        // input; empirical/analytic within 10%.
        let n = 64;
        let std = 0.05;
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let w = g.param(
            "w",
            Shape::new(n, n, 1, 1),
            crate::graph::ParamKind::LinearWeight,
        );
        let y = g.linear(x, w, None);
        g.mark_output(y);
        let scheme = InitScheme::gaussian(std);
        let trace =
            probe_forward_variance(&mut g, &scheme, &[Shape::new(256, n, 1, 1)], 100, 5).unwrap();
        let vy = trace.entry(y).unwrap().variance;
        let analytic = n as f64 * std * std; // C_i = 1, Var[x] = 1
        let ratio = vy / analytic;
        assert!((0.9..1.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn backward_single_layer_under_backward_condition() {
        let n = 64;
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let w = g.param(
            "w",
            Shape::new(n, n, 1, 1),
            crate::graph::ParamKind::LinearWeight,
        );
        let y = g.linear(x, w, None);
        g.mark_output(y);
        // Var[w] = 1/(C_o n_o) with alpha = 1.
        let std = crate::init::backward_std(1.0, 1, n);
        let trace = probe_backward_variance(
            &mut g,
            &InitScheme::gaussian(std),
            &[Shape::new(256, n, 1, 1)],
            100,
            7,
        )
        .unwrap();
        let vx = trace.entry(x).unwrap().variance;
        assert!((0.8..1.25).contains(&vx), "Var[dx] = {vx}");
    }

    #[test]
    fn measured_relu_alpha_is_about_half() {
        let mut chain = build_branch_chain::<f64>(4, 2, 64);
        let scheme = InitScheme::branch_aware(0.5, Compromise::PaperEq15);
        let trace = probe_forward_variance(
            &mut chain.graph,
            &scheme,
            &[Shape::new(64, 64, 1, 1)],
            50,
            11,
        )
        .unwrap();
        let alpha = trace.relu_alpha.unwrap();
        assert!((alpha - 0.5).abs() < 0.05, "alpha {alpha}");
    }

    #[test]
    fn branch_sum_roughly_doubles_variance() {
        let (vs, vb) = simulate_branch_sum(60, 13).unwrap();
        let ratio = vs / vb;
        assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
    }
}
