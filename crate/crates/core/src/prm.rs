//! Builders for pre-activation residual units and the pyramid residual
//! module variants, plus parameter and MAC accounting over graph
//! fragments.
//!
//! A pyramid residual module computes
//! `x + f0(x) + g(combine_c f_c(x))`: `f0` is the usual bottleneck
//! branch, each `f_c` filters a fractionally subsampled copy of the
//! input, and `g` maps the combined pyramid features back to the output
//! width. `g` is folded into the unit's final 1x1 convolution: the
//! summed pyramid (or, for the concatenation variant, the stacked
//! pyramid) joins the bottleneck features right before that convolution,
//! whose columns acting on the pyramid channels are exactly `g`. By
//! linearity the decomposition above holds exactly, and the fold keeps
//! the added cost of a pyramid small.

#[allow(unused_imports)] // needed for no_std float math, redundant with std
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op, ParamKind};
use crate::real::Real;
use crate::tensor::{ConvSpec, Shape};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Subsampling ratios `s_c = 2^(-M c / C)` for `c = 0..=C`. `s_0` is
/// always 1 and `s_C` is `2^-M`; the sequence is strictly decreasing.
pub fn pyramid_scales(decay_m: usize, levels_c: usize) -> Vec<f64> {
    debug_assert!(decay_m >= 1 && levels_c >= 1);
    (0..=levels_c)
        .map(|c| {
            let exponent = -(decay_m as f64) * c as f64 / levels_c as f64;
            2f64.powf(exponent)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResidualUnitConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub bottleneck: usize,
}

impl Default for ResidualUnitConfig {
    fn default() -> Self {
        ResidualUnitConfig {
            in_channels: 256,
            out_channels: 256,
            bottleneck: 128,
        }
    }
}

impl ResidualUnitConfig {
    pub fn with_channels(in_channels: usize, out_channels: usize) -> Self {
        ResidualUnitConfig {
            in_channels,
            out_channels,
            bottleneck: (out_channels / 2).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PrmVariant {
    /// Separate 1x1 reduction per pyramid level.
    A,
    /// One shared 1x1 reduction feeding all levels.
    B,
    /// B with the 3x3 weights shared across levels.
    Bstar,
    /// B with the pyramid outputs concatenated instead of summed.
    C,
    /// B with dilated convolutions instead of subsample/upsample.
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PrmConfig {
    pub variant: PrmVariant,
    /// Extra pyramid levels (excluding the original-scale branch).
    pub levels: usize,
    /// Resolution decay M: the lowest scale is 2^-M.
    pub decay: usize,
    /// Channels per pyramid level.
    pub branch_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bottleneck: usize,
    /// 3x3 weights shared across levels; forced on for B*.
    pub weight_shared: bool,
}

impl PrmConfig {
    /// Branch width defaults to the 28-of-256 proportion of the output
    /// width, clamped to the bottleneck it folds into.
    pub fn new(variant: PrmVariant, in_channels: usize, out_channels: usize) -> Self {
        let bottleneck = (out_channels / 2).max(1);
        PrmConfig {
            variant,
            levels: 4,
            decay: 1,
            branch_channels: (out_channels * 28 / 256).clamp(1, bottleneck),
            in_channels,
            out_channels,
            bottleneck,
            weight_shared: variant == PrmVariant::Bstar,
        }
    }

    /// The configuration used for the complexity accounting: 256-d
    /// in/out, four extra levels, 28 branch channels.
    pub fn paper_scale(variant: PrmVariant) -> Self {
        let mut cfg = PrmConfig::new(variant, 256, 256);
        cfg.branch_channels = 28;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::invalid("prm levels must be >= 1"));
        }
        if self.decay < 1 {
            return Err(Error::invalid("prm decay must be >= 1"));
        }
        if self.branch_channels < 1 || self.bottleneck < 1 {
            return Err(Error::invalid("prm channel widths must be >= 1"));
        }
        if self.variant != PrmVariant::C && self.branch_channels > self.bottleneck {
            return Err(Error::invalid(
                "summed pyramid variants fold into the bottleneck; branch_channels must not exceed it",
            ));
        }
        Ok(())
    }
}

/// Either building block an assembly can use.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum BlockKind {
    Residual,
    Prm(PrmVariant),
}

pub(crate) fn conv_weight<T: Real>(g: &mut Graph<T>, name: String, spec: ConvSpec) -> NodeId {
    g.param(name, spec.weight_shape(), ParamKind::ConvWeight)
}

/// BN + ReLU pre-activation block.
pub(crate) fn bn_relu<T: Real>(g: &mut Graph<T>, x: NodeId, prefix: &str, channels: usize) -> NodeId {
    let gamma = g.param(
        format!("{prefix}.bn.g"),
        Shape::new(1, channels, 1, 1),
        ParamKind::BnGamma,
    );
    let beta = g.param(
        format!("{prefix}.bn.b"),
        Shape::new(1, channels, 1, 1),
        ParamKind::BnBeta,
    );
    let bn = g.batch_norm(x, gamma, beta, BN_EPS, BN_MOMENTUM);
    g.relu(bn)
}

fn conv<T: Real>(g: &mut Graph<T>, x: NodeId, spec: ConvSpec, name: String) -> NodeId {
    let w = conv_weight(g, name, spec);
    g.conv(x, spec, w, None)
}

/// Pre-activated input plus the bottleneck chain (1x1 -> 3x3 -> 1x1).
fn residual_parts<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    cfg: &ResidualUnitConfig,
    prefix: &str,
) -> (NodeId, NodeId) {
    let t = bn_relu(g, x, &format!("{prefix}.pre"), cfg.in_channels);
    let a = conv(
        g,
        t,
        ConvSpec::pointwise(cfg.bottleneck, cfg.in_channels),
        format!("{prefix}.reduce.w"),
    );
    let b = bn_relu(g, a, &format!("{prefix}.mid"), cfg.bottleneck);
    let c = conv(
        g,
        b,
        ConvSpec::same3x3(cfg.bottleneck, cfg.bottleneck, 1),
        format!("{prefix}.conv.w"),
    );
    let d = bn_relu(g, c, &format!("{prefix}.out"), cfg.bottleneck);
    let e = conv(
        g,
        d,
        ConvSpec::pointwise(cfg.out_channels, cfg.bottleneck),
        format!("{prefix}.expand.w"),
    );
    (t, e)
}

/// The pre-activation bottleneck chain alone, no skip: the `F` of a
/// residual unit.
pub fn build_residual_branch<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    cfg: &ResidualUnitConfig,
    prefix: &str,
) -> NodeId {
    residual_parts(g, x, cfg, prefix).1
}

/// Identity skip + pre-activation bottleneck (1x1 -> 3x3 -> 1x1). When
/// in/out channels differ the skip becomes a 1x1 convolution on the
/// pre-activated input.
pub fn build_residual_unit<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    cfg: &ResidualUnitConfig,
    prefix: &str,
) -> NodeId {
    let (t, e) = residual_parts(g, x, cfg, prefix);
    let skip = if cfg.in_channels == cfg.out_channels {
        x
    } else {
        conv(
            g,
            t,
            ConvSpec::pointwise(cfg.out_channels, cfg.in_channels),
            format!("{prefix}.skip.w"),
        )
    };
    g.add(&[skip, e])
}

/// Pyramid residual module. The residual branch is the bottleneck `f0`
/// plus `levels` fractional-resolution branches folded into the final
/// expansion convolution (see module docs); the skip is the identity.
pub fn build_prm<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    cfg: &PrmConfig,
    prefix: &str,
) -> Result<NodeId> {
    cfg.validate()?;
    let scales = pyramid_scales(cfg.decay, cfg.levels);
    let t = bn_relu(g, x, &format!("{prefix}.pre"), cfg.in_channels);

    // f0: reduce, filter; its expansion happens in the combine conv below.
    let f0a = conv(
        g,
        t,
        ConvSpec::pointwise(cfg.bottleneck, cfg.in_channels),
        format!("{prefix}.f0.reduce.w"),
    );
    let f0b = bn_relu(g, f0a, &format!("{prefix}.f0.mid"), cfg.bottleneck);
    let f0c = conv(
        g,
        f0b,
        ConvSpec::same3x3(cfg.bottleneck, cfg.bottleneck, 1),
        format!("{prefix}.f0.conv.w"),
    );
    let mid = bn_relu(g, f0c, &format!("{prefix}.f0.out"), cfg.bottleneck);

    // Pyramid branches at scales s_1..s_C.
    let shared_reduce = match cfg.variant {
        PrmVariant::A => None,
        _ => Some(conv(
            g,
            t,
            ConvSpec::pointwise(cfg.branch_channels, cfg.in_channels),
            format!("{prefix}.pyr.reduce.w"),
        )),
    };
    let shared_filter = (cfg.weight_shared || cfg.variant == PrmVariant::Bstar).then(|| {
        conv_weight(
            g,
            format!("{prefix}.pyr.conv.w"),
            ConvSpec::same3x3(cfg.branch_channels, cfg.branch_channels, 1),
        )
    });

    let mut level_outputs = Vec::with_capacity(cfg.levels);
    for c in 1..=cfg.levels {
        let ratio = scales[c];
        let base = match shared_reduce {
            Some(r) => r,
            None => conv(
                g,
                t,
                ConvSpec::pointwise(cfg.branch_channels, cfg.in_channels),
                format!("{prefix}.pyr.l{c}.reduce.w"),
            ),
        };
        let level = if cfg.variant == PrmVariant::D {
            // Dilated filtering at full resolution; rate mirrors 1/s_c.
            let rate = ((1.0 / ratio) + 0.5).floor() as usize;
            let pre = bn_relu(g, base, &format!("{prefix}.pyr.l{c}"), cfg.branch_channels);
            let spec = ConvSpec::same3x3(cfg.branch_channels, cfg.branch_channels, rate.max(1));
            match shared_filter {
                Some(w) => g.conv(pre, spec, w, None),
                None => conv(g, pre, spec, format!("{prefix}.pyr.l{c}.conv.w")),
            }
        } else {
            let down = g.subsample(base, ratio);
            let pre = bn_relu(g, down, &format!("{prefix}.pyr.l{c}"), cfg.branch_channels);
            let spec = ConvSpec::same3x3(cfg.branch_channels, cfg.branch_channels, 1);
            let filtered = match shared_filter {
                Some(w) => g.conv(pre, spec, w, None),
                None => conv(g, pre, spec, format!("{prefix}.pyr.l{c}.conv.w")),
            };
            g.resize_like(filtered, t)
        };
        level_outputs.push(level);
    }

    // Combine the pyramid with f0's features and expand once; the slice of
    // the expansion acting on the pyramid channels is g.
    let combined_in = if cfg.variant == PrmVariant::C {
        let cat = g.concat(&level_outputs);
        let gin = bn_relu(
            g,
            cat,
            &format!("{prefix}.g"),
            cfg.branch_channels * cfg.levels,
        );
        let v = g.concat(&[mid, gin]);
        (v, cfg.bottleneck + cfg.branch_channels * cfg.levels)
    } else {
        let sum = if level_outputs.len() == 1 {
            level_outputs[0]
        } else {
            g.add(&level_outputs)
        };
        let gin = bn_relu(g, sum, &format!("{prefix}.g"), cfg.branch_channels);
        let padded = g.pad_channels(gin, cfg.bottleneck);
        let v = g.add(&[mid, padded]);
        (v, cfg.bottleneck)
    };
    let expanded = conv(
        g,
        combined_in.0,
        ConvSpec::pointwise(cfg.out_channels, combined_in.1),
        format!("{prefix}.combine.w"),
    );

    let skip = if cfg.in_channels == cfg.out_channels {
        x
    } else {
        conv(
            g,
            t,
            ConvSpec::pointwise(cfg.out_channels, cfg.in_channels),
            format!("{prefix}.skip.w"),
        )
    };
    Ok(g.add(&[skip, expanded]))
}

/// Exact count of learnable scalars in the graph (conv/linear weights,
/// biases, batch-norm affine terms).
pub fn param_count<T: Real>(g: &Graph<T>) -> usize {
    g.params().iter().map(|p| p.shape.numel()).sum()
}

/// Multiply-accumulate count for one evaluation at the given input
/// shapes. Convolutions and linear layers contribute
/// `output elements x kernel fan`; resampling counts 4 MACs per output
/// element; everything else is free.
pub fn flop_count<T: Real>(g: &Graph<T>, input_shapes: &[Shape]) -> Result<u64> {
    let shapes = g.infer_shapes(input_shapes)?;
    let mut macs: u64 = 0;
    for node in g.nodes() {
        let out = shapes[node.id];
        macs += match &node.op {
            Op::Conv(spec) => out.numel() as u64 * (spec.in_ch * spec.kh * spec.kw) as u64,
            Op::Linear => {
                let w = shapes[node.inputs[1]];
                out.numel() as u64 * w.c as u64
            }
            Op::Subsample { .. } | Op::ResizeLike => 4 * out.numel() as u64,
            _ => 0,
        };
    }
    Ok(macs)
}

/// Convenience: a fresh graph holding exactly one block, with its input
/// marked, for counting and probing fragments in isolation.
pub fn fragment<T: Real>(kind: BlockKind, cfg_prm: &PrmConfig) -> Result<(Graph<T>, NodeId, NodeId)> {
    let mut g: Graph<T> = Graph::new();
    let x = g.input();
    let out = match kind {
        BlockKind::Residual => build_residual_unit(
            &mut g,
            x,
            &ResidualUnitConfig {
                in_channels: cfg_prm.in_channels,
                out_channels: cfg_prm.out_channels,
                bottleneck: cfg_prm.bottleneck,
            },
            "unit",
        ),
        BlockKind::Prm(v) => {
            let mut cfg = *cfg_prm;
            cfg.variant = v;
            cfg.weight_shared = cfg.weight_shared || v == PrmVariant::Bstar;
            build_prm(&mut g, x, &cfg, "unit")?
        }
    };
    g.mark_output(out);
    Ok((g, x, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use crate::rng::{rng_from_seed, standard_normal};
    use crate::tensor::Tensor;

    #[test]
    fn scales_match_the_m1_c4_setting() {
        let s = pyramid_scales(1, 4);
        let want = [
            1.0,
            2f64.powf(-0.25),
            2f64.powf(-0.5),
            2f64.powf(-0.75),
            0.5,
        ];
        assert_eq!(s.len(), 5);
        for (a, b) in s.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s[0], 1.0);
        assert_eq!(s[4], 0.5);
    }

    #[test]
    fn scales_simple_cases() {
        assert_eq!(pyramid_scales(1, 1), alloc::vec![1.0, 0.5]);
        let s = pyramid_scales(2, 4);
        let want = [1.0, 2f64.powf(-0.5), 0.5, 2f64.powf(-1.5), 0.25];
        for (a, b) in s.iter().zip(&want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scales_strictly_decreasing() {
        for (m, c) in [(1, 4), (2, 4), (1, 8), (3, 5)] {
            let s = pyramid_scales(m, c);
            assert_eq!(s[0], 1.0);
            assert!((s[c] - 0.5f64.powi(m as i32)).abs() < 1e-15);
            for w in s.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn residual_unit_param_count_matches_hand_count() {
        let cfg = PrmConfig::paper_scale(PrmVariant::B);
        let (g, _, _) = fragment::<f32>(BlockKind::Residual, &cfg).unwrap();
        let convs: usize = g
            .params()
            .iter()
            .filter(|p| p.kind == ParamKind::ConvWeight)
            .map(|p| p.shape.numel())
            .sum();
        assert_eq!(convs, 256 * 128 + 128 * 128 * 9 + 128 * 256);
        assert_eq!(convs, 212_992);
        // Plus the three pre-activation batch norms.
        assert_eq!(param_count(&g), 212_992 + 2 * (256 + 128 + 128));
    }

    #[test]
    fn zeroed_residual_unit_is_identity() {
        let cfg = PrmConfig::new(PrmVariant::B, 8, 8);
        let (mut g, _, _) = fragment::<f64>(BlockKind::Residual, &cfg).unwrap();
        // Leave BN gains at one, weights at zero: the residual branch dies.
        for i in 0..g.params().len() {
            let info = g.params()[i].clone();
            if info.kind == ParamKind::BnGamma {
                g.set_param(i, Tensor::full(info.shape, 1.0)).unwrap();
            }
        }
        let mut rng = rng_from_seed(3);
        let x = Tensor::from_fn(Shape::new(2, 8, 6, 6), |_, _, _, _| standard_normal(&mut rng));
        let pass = g.forward(&[x.clone()], Mode::Train).unwrap();
        assert_eq!(g.outputs_of(&pass)[0], &x);
    }

    #[test]
    fn zeroed_prm_is_identity_for_every_variant() {
        for v in [PrmVariant::A, PrmVariant::B, PrmVariant::Bstar, PrmVariant::C, PrmVariant::D] {
            let cfg = PrmConfig::new(v, 8, 8);
            let (mut g, _, _) = fragment::<f64>(BlockKind::Prm(v), &cfg).unwrap();
            for i in 0..g.params().len() {
                let info = g.params()[i].clone();
                if info.kind == ParamKind::BnGamma {
                    g.set_param(i, Tensor::full(info.shape, 1.0)).unwrap();
                }
            }
            let mut rng = rng_from_seed(4);
            let x = Tensor::from_fn(Shape::new(1, 8, 8, 8), |_, _, _, _| standard_normal(&mut rng));
            let pass = g.forward(&[x.clone()], Mode::Train).unwrap();
            assert_eq!(g.outputs_of(&pass)[0], &x, "variant {v:?}");
        }
    }

    #[test]
    fn shape_preserved_for_every_variant_and_odd_sizes() {
        for v in [PrmVariant::A, PrmVariant::B, PrmVariant::Bstar, PrmVariant::C, PrmVariant::D] {
            let cfg = PrmConfig::new(v, 8, 8);
            let (g, _, _) = fragment::<f32>(BlockKind::Prm(v), &cfg).unwrap();
            for (h, w) in [(8, 8), (9, 11), (16, 10)] {
                let shapes = g.infer_shapes(&[Shape::new(1, 8, h, w)]).unwrap();
                let out = shapes[*g.output_ids().first().unwrap()];
                assert_eq!(out, Shape::new(1, 8, h, w), "variant {v:?} at {h}x{w}");
            }
        }
    }

    #[test]
    fn variant_d_has_no_resampling_nodes_and_b_param_count() {
        let cfg_b = PrmConfig::paper_scale(PrmVariant::B);
        let cfg_d = PrmConfig::paper_scale(PrmVariant::D);
        let (gb, _, _) = fragment::<f32>(BlockKind::Prm(PrmVariant::B), &cfg_b).unwrap();
        let (gd, _, _) = fragment::<f32>(BlockKind::Prm(PrmVariant::D), &cfg_d).unwrap();
        assert!(gd
            .nodes()
            .iter()
            .all(|n| !matches!(n.op, Op::Subsample { .. } | Op::ResizeLike)));
        assert_eq!(param_count(&gd), param_count(&gb));
    }

    #[test]
    fn pointwise_conv_flops_match_formula() {
        let mut g: Graph<f32> = Graph::new();
        let x = g.input();
        let spec = ConvSpec::pointwise(128, 256);
        let w = conv_weight(&mut g, "w".into(), spec);
        let y = g.conv(x, spec, w, None);
        g.mark_output(y);
        let macs = flop_count(&g, &[Shape::new(1, 256, 64, 64)]).unwrap();
        assert_eq!(macs, 256 * 128 * 64 * 64);
    }
}
