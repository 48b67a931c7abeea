//! Weight-initialization schemes: fixed Gaussian, Xavier, MSR, and the
//! branch-aware rule that folds the number of summed input branches and
//! consumer branches into the weight variance.

#[allow(unused_imports)] // needed for no_std float math, redundant with std
use num_traits::Float;
use crate::error::{Error, Result};
use crate::graph::{layer_fan, Graph, LayerFan, Op, ParamKind};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InitKind {
    GaussianFixed,
    Xavier,
    Msr,
    BranchAware,
}

/// How the branch-aware rule compromises between the forward condition
/// `Var[w] = 1/(α C_i n_i)` and the backward condition
/// `Var[w] = 1/(α C_o n_o)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Compromise {
    /// `Var[w] = 1/(α² (C_i n_i + C_o n_o))`.
    PaperEq15,
    /// Harmonic-style mean of the two exact conditions:
    /// `Var[w] = 2/(α (C_i n_i + C_o n_o))`.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InitScheme {
    pub kind: InitKind,
    /// Activation factor: 0.5 for ReLU, 1.0 for Tanh/Sigmoid (or none).
    pub alpha: f64,
    /// Only used by `GaussianFixed`.
    pub fixed_std: f64,
    pub compromise: Compromise,
}

impl InitScheme {
    pub fn gaussian(std: f64) -> Self {
        InitScheme {
            kind: InitKind::GaussianFixed,
            alpha: 0.5,
            fixed_std: std,
            compromise: Compromise::PaperEq15,
        }
    }

    pub fn xavier() -> Self {
        InitScheme {
            kind: InitKind::Xavier,
            alpha: 1.0,
            fixed_std: 0.0,
            compromise: Compromise::PaperEq15,
        }
    }

    pub fn msr(alpha: f64) -> Self {
        InitScheme {
            kind: InitKind::Msr,
            alpha,
            fixed_std: 0.0,
            compromise: Compromise::PaperEq15,
        }
    }

    pub fn branch_aware(alpha: f64, compromise: Compromise) -> Self {
        InitScheme {
            kind: InitKind::BranchAware,
            alpha,
            fixed_std: 0.0,
            compromise,
        }
    }
}

/// Standard deviation of the forward-only condition
/// `Var[w] = 1/(α C_i n_i)`.
pub fn forward_std(alpha: f64, c_in: usize, n_in: usize) -> f64 {
    (1.0 / (alpha * (c_in * n_in) as f64)).sqrt()
}

/// Standard deviation of the backward-only condition
/// `Var[w] = 1/(α C_o n_o)`.
pub fn backward_std(alpha: f64, c_out: usize, n_out: usize) -> f64 {
    (1.0 / (alpha * (c_out * n_out) as f64)).sqrt()
}

/// Weight standard deviation for a layer with the given fan geometry.
pub fn init_std(scheme: &InitScheme, c_in: usize, n_in: usize, c_out: usize, n_out: usize) -> Result<f64> {
    if c_in == 0 || n_in == 0 || c_out == 0 || n_out == 0 {
        return Err(Error::invalid("init_std: all fan counts must be >= 1"));
    }
    let std = match scheme.kind {
        InitKind::GaussianFixed => scheme.fixed_std,
        InitKind::Xavier => (2.0 / (n_in + n_out) as f64).sqrt(),
        InitKind::Msr => (1.0 / (scheme.alpha * n_in as f64)).sqrt(),
        InitKind::BranchAware => {
            let sum = (c_in * n_in + c_out * n_out) as f64;
            match scheme.compromise {
                Compromise::PaperEq15 => (1.0 / (scheme.alpha * scheme.alpha * sum)).sqrt(),
                Compromise::Balanced => (2.0 / (scheme.alpha * sum)).sqrt(),
            }
        }
    };
    Ok(std)
}

/// Fan geometry used for a weight parameter: the degrees of the first
/// layer that consumes it. Weight sharing keeps one tensor consumed by
/// several structurally identical layers, so the first is representative.
fn fan_for_param<T: Real>(graph: &Graph<T>, param_node: usize) -> Option<LayerFan> {
    let layer = graph.nodes().iter().find(|n| {
        matches!(n.op, Op::Conv(_) | Op::Linear) && n.inputs.get(1) == Some(&param_node)
    })?;
    layer_fan(graph, layer.id)
}

/// Draw every weight leaf i.i.d. zero-mean Gaussian with the scheme's
/// std for that layer's fan geometry; biases and batch-norm shifts to
/// zero, batch-norm gains to one. Each parameter gets its own stream
/// derived from `seed` and the parameter name, so the result does not
/// depend on initialization order.
pub fn apply_init<T: Real>(graph: &mut Graph<T>, scheme: &InitScheme, seed: u64) -> Result<()> {
    for idx in 0..graph.params().len() {
        let info = graph.params()[idx].clone();
        let value = match info.kind {
            ParamKind::Bias | ParamKind::BnBeta => Tensor::zeros(info.shape),
            ParamKind::BnGamma => Tensor::full(info.shape, T::one()),
            ParamKind::ConvWeight | ParamKind::LinearWeight => {
                let fan = fan_for_param(graph, info.node).ok_or_else(|| {
                    Error::invalid("weight parameter is not consumed by any conv/linear layer")
                })?;
                let std = init_std(scheme, fan.c_in, fan.n_in, fan.c_out, fan.n_out)?;
                let mut rng = rng_from_seed(derive_seed(seed, &info.name));
                let std_t = T::from_f64(std);
                Tensor::from_fn(info.shape, |_, _, _, _| standard_normal::<T>(&mut rng) * std_t)
            }
        };
        graph.set_param(idx, value)?;
    }
    // Fresh running statistics belong with fresh weights.
    for stats in graph.bn_running_mut().values_mut() {
        for m in stats.mean.iter_mut() {
            *m = T::zero();
        }
        for v in stats.var.iter_mut() {
            *v = T::one();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ParamKind;
    use crate::tensor::Shape;

    #[test]
    fn fixed_std_passes_through() {
        let s = InitScheme::gaussian(0.01);
        assert_eq!(init_std(&s, 1, 10, 1, 10).unwrap(), 0.01);
    }

    #[test]
    fn msr_matches_hand_arithmetic() {
        let s = InitScheme::msr(0.5);
        let std = init_std(&s, 1, 512, 1, 512).unwrap();
        assert_eq!(std, 0.0625);
    }

    #[test]
    fn branch_aware_eq15_hand_value() {
        let s = InitScheme::branch_aware(0.5, Compromise::PaperEq15);
        let std = init_std(&s, 2, 256, 1, 256).unwrap();
        // 1/(0.25 * 768) = 1/192
        assert!((std - (1.0f64 / 192.0).sqrt()).abs() < 1e-15);
        assert!((std - 0.0722).abs() < 1e-4);
    }

    #[test]
    fn balanced_degenerates_to_xavier() {
        let s = InitScheme::branch_aware(1.0, Compromise::Balanced);
        let x = InitScheme::xavier();
        for (n_in, n_out) in [(64, 64), (128, 512), (7, 13)] {
            let a = init_std(&s, 1, n_in, 1, n_out).unwrap();
            let b = init_std(&x, 1, n_in, 1, n_out).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn forward_only_degenerates_to_msr() {
        for n in [64, 256, 999] {
            let msr = init_std(&InitScheme::msr(0.5), 1, n, 1, n).unwrap();
            assert_eq!(forward_std(0.5, 1, n).to_bits(), msr.to_bits());
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(init_std(&InitScheme::xavier(), 0, 5, 1, 5).is_err());
    }

    #[test]
    fn monotone_decreasing_in_every_count() {
        let s = InitScheme::branch_aware(0.5, Compromise::PaperEq15);
        let base = init_std(&s, 2, 64, 2, 64).unwrap();
        assert!(init_std(&s, 3, 64, 2, 64).unwrap() < base);
        assert!(init_std(&s, 2, 65, 2, 64).unwrap() < base);
        assert!(init_std(&s, 2, 64, 3, 64).unwrap() < base);
        assert!(init_std(&s, 2, 64, 2, 65).unwrap() < base);
    }

    #[test]
    fn apply_init_is_deterministic_and_on_spec() {
        let build = || {
            let mut g: Graph<f64> = Graph::new();
            let x = g.input();
            let w = g.param("layer.w", Shape::new(256, 256, 1, 1), ParamKind::LinearWeight);
            let y = g.linear(x, w, None);
            g.mark_output(y);
            g
        };
        let scheme = InitScheme::msr(0.5);
        let mut g1 = build();
        apply_init(&mut g1, &scheme, 123).unwrap();
        let mut g2 = build();
        apply_init(&mut g2, &scheme, 123).unwrap();
        assert_eq!(g1.param_values()[0], g2.param_values()[0]);

        // Empirical std within 3% of the requested one.
        let want = init_std(&scheme, 1, 256, 1, 256).unwrap();
        let (_, var) = g1.param_values()[0].moments();
        let got = var.sqrt();
        assert!((got / want - 1.0).abs() < 0.03, "std {got} vs {want}");
    }
}
