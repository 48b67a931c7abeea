//! Stacked-hourglass graph builder. Each stack runs bottom-up pooling and
//! top-down upsampling with a lateral block at every resolution; the
//! lateral and upsampled streams meet at skip-sums. A score head with its
//! own loss hangs off every stack (intermediate supervision).
//!
//! With `variance_fix` enabled, the lateral (skip) addend of every
//! skip-sum is routed through BN-ReLU-Conv1x1 instead of arriving as a
//! pure identity chain, which resets the accumulated response variance
//! at the merge.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamKind};
use crate::prm::{bn_relu, build_prm, build_residual_unit, conv_weight, PrmConfig, PrmVariant,
    ResidualUnitConfig, BN_EPS, BN_MOMENTUM};
use crate::real::Real;
use crate::tensor::{ConvSpec, PoolKind, Shape};

/// Which building block fills the hourglass.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum BlockSpec {
    Residual,
    Prm {
        variant: PrmVariant,
        levels: usize,
        decay: usize,
        branch_channels: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HourglassConfig {
    /// Number of stacked hourglasses, each with a score head.
    pub stacks: usize,
    /// Pooling steps inside each hourglass.
    pub depth: usize,
    /// Feature width inside the hourglasses.
    pub channels: usize,
    /// Image channels (1 for grayscale).
    pub in_channels: usize,
    /// Score-map channels K.
    pub keypoints: usize,
    /// Input geometry; heatmaps are input/4 after the stem.
    pub input_size: (usize, usize),
    pub block: BlockSpec,
    /// Replace the skip addend of every skip-sum with BN-ReLU-Conv1x1.
    pub variance_fix: bool,
}

impl HourglassConfig {
    pub fn toy() -> Self {
        HourglassConfig {
            stacks: 2,
            depth: 3,
            channels: 16,
            in_channels: 1,
            keypoints: 5,
            input_size: (64, 64),
            block: BlockSpec::Residual,
            variance_fix: false,
        }
    }

    pub fn heatmap_size(&self) -> (usize, usize) {
        (self.input_size.0 / 4, self.input_size.1 / 4)
    }
}

/// A built pose network: the graph plus the bookkeeping the trainer and
/// probes need.
#[derive(Debug, Clone)]
pub struct PoseModel<T> {
    pub graph: Graph<T>,
    pub config: HourglassConfig,
    /// Skip-sum nodes, innermost first per stack; the last entry is the
    /// outermost merge of the last stack.
    pub skip_sums: Vec<NodeId>,
}

struct Builder<'c> {
    cfg: &'c HourglassConfig,
}

impl<'c> Builder<'c> {
    fn block<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        in_ch: usize,
        out_ch: usize,
        prefix: String,
    ) -> Result<NodeId> {
        match self.cfg.block {
            BlockSpec::Residual => Ok(build_residual_unit(
                g,
                x,
                &ResidualUnitConfig::with_channels(in_ch, out_ch),
                &prefix,
            )),
            BlockSpec::Prm {
                variant,
                levels,
                decay,
                branch_channels,
            } => {
                let mut cfg = PrmConfig::new(variant, in_ch, out_ch);
                cfg.levels = levels;
                cfg.decay = decay;
                cfg.branch_channels = branch_channels.min(cfg.bottleneck);
                build_prm(g, x, &cfg, &prefix)
            }
        }
    }

    /// One hourglass level; recurses down to depth 1.
    fn hourglass<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        depth: usize,
        prefix: &str,
        skip_sums: &mut Vec<NodeId>,
    ) -> Result<NodeId> {
        let ch = self.cfg.channels;
        let mut up1 = self.block(g, x, ch, ch, format!("{prefix}.up1"))?;
        if self.cfg.variance_fix {
            let pre = bn_relu(g, up1, &format!("{prefix}.fix"), ch);
            let spec = ConvSpec::pointwise(ch, ch);
            let w = conv_weight(g, format!("{prefix}.fix.w"), spec);
            up1 = g.conv(pre, spec, w, None);
        }
        let pooled = g.pool(x, PoolKind::Max, (2, 2), (2, 2));
        let low1 = self.block(g, pooled, ch, ch, format!("{prefix}.low1"))?;
        let low2 = if depth > 1 {
            self.hourglass(g, low1, depth - 1, &format!("{prefix}.low2"), skip_sums)?
        } else {
            self.block(g, low1, ch, ch, format!("{prefix}.low2"))?
        };
        let low3 = self.block(g, low2, ch, ch, format!("{prefix}.low3"))?;
        let up2 = g.resize_like(low3, up1);
        let merged = g.add(&[up1, up2]);
        skip_sums.push(merged);
        Ok(merged)
    }
}

/// Build the full stacked network: stem (conv7 stride 2, block, pool,
/// block; a fixed x4 downsample), then `stacks` hourglasses each ending
/// in a K-channel score map marked as a graph output.
pub fn build_pose_model<T: Real>(cfg: &HourglassConfig) -> Result<PoseModel<T>> {
    if cfg.stacks < 1 || cfg.depth < 1 {
        return Err(Error::invalid("hourglass needs stacks >= 1 and depth >= 1"));
    }
    let (h, w) = cfg.heatmap_size();
    let div = 1usize << cfg.depth;
    if cfg.input_size.0 % 4 != 0
        || cfg.input_size.1 % 4 != 0
        || h % div != 0
        || w % div != 0
        || h / div == 0
    {
        return Err(Error::invalid(
            "input size must be divisible by 4 and the heatmap by 2^depth",
        ));
    }
    let ch = cfg.channels;
    let stem_ch = (ch / 2).max(1);
    let b = Builder { cfg };

    let mut g: Graph<T> = Graph::new();
    let x = g.input();

    // Stem: conv7/2 + BN-ReLU, block, pool /2, block. Stem blocks stay
    // residual so the configured block only varies inside the hourglasses.
    let spec7 = ConvSpec::new(stem_ch, cfg.in_channels, 7, 7)
        .with_stride(2)
        .with_padding(3);
    let w7 = conv_weight(&mut g, "stem.conv7.w".into(), spec7);
    let c7 = g.conv(x, spec7, w7, None);
    let a7 = post_bn_relu(&mut g, c7, "stem.conv7", stem_ch);
    let s1 = build_residual_unit(
        &mut g,
        a7,
        &ResidualUnitConfig::with_channels(stem_ch, ch),
        "stem.res1",
    );
    let s2 = g.pool(s1, PoolKind::Max, (2, 2), (2, 2));
    let mut cur = build_residual_unit(
        &mut g,
        s2,
        &ResidualUnitConfig::with_channels(ch, ch),
        "stem.res2",
    );

    let mut skip_sums = Vec::new();
    for s in 0..cfg.stacks {
        let p = format!("s{s}");
        let hg = b.hourglass(&mut g, cur, cfg.depth, &p, &mut skip_sums)?;
        let post = b.block(&mut g, hg, ch, ch, format!("{p}.post"))?;
        // Head: conv1x1 + BN + ReLU, then the score projection.
        let fc_spec = ConvSpec::pointwise(ch, ch);
        let fc_w = conv_weight(&mut g, format!("{p}.fc.w"), fc_spec);
        let fc_c = g.conv(post, fc_spec, fc_w, None);
        let fc = post_bn_relu(&mut g, fc_c, &format!("{p}.fc"), ch);
        let score_spec = ConvSpec::pointwise(cfg.keypoints, ch);
        let score_w = conv_weight(&mut g, format!("{p}.score.w"), score_spec);
        let score_b = g.param(
            format!("{p}.score.b"),
            Shape::new(1, cfg.keypoints, 1, 1),
            ParamKind::Bias,
        );
        let score = g.conv(fc, score_spec, score_w, Some(score_b));
        g.mark_output(score);

        if s + 1 < cfg.stacks {
            let back_spec = ConvSpec::pointwise(ch, ch);
            let back_w = conv_weight(&mut g, format!("{p}.fc_back.w"), back_spec);
            let fc_back = g.conv(fc, back_spec, back_w, None);
            let sb_spec = ConvSpec::pointwise(ch, cfg.keypoints);
            let sb_w = conv_weight(&mut g, format!("{p}.score_back.w"), sb_spec);
            let score_back = g.conv(score, sb_spec, sb_w, None);
            cur = g.add(&[cur, fc_back, score_back]);
        }
    }

    Ok(PoseModel {
        graph: g,
        config: *cfg,
        skip_sums,
    })
}

/// Post-activation conv head: BN then ReLU after a convolution.
fn post_bn_relu<T: Real>(g: &mut Graph<T>, x: NodeId, prefix: &str, channels: usize) -> NodeId {
    let gamma = g.param(
        format!("{prefix}.postbn.g"),
        Shape::new(1, channels, 1, 1),
        ParamKind::BnGamma,
    );
    let beta = g.param(
        format!("{prefix}.postbn.b"),
        Shape::new(1, channels, 1, 1),
        ParamKind::BnBeta,
    );
    let bn = g.batch_norm(x, gamma, beta, BN_EPS, BN_MOMENTUM);
    g.relu(bn)
}
