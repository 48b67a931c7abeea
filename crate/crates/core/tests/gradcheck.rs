//! Finite-difference verification of every differentiable operator and
//! of the composed pyramid module, all in double precision.

use pyranet_core::graph::{grad_check, Graph, Mode, ParamKind};
use pyranet_core::prm::{build_prm, PrmConfig, PrmVariant};
use pyranet_core::rng::{rng_for, standard_normal};
use pyranet_core::tensor::{ConvSpec, PoolKind, Tensor};
use pyranet_core::Shape;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn randn(shape: Shape, seed: u64, label: &str) -> Tensor<f64> {
    let mut rng = rng_for(seed, label);
    Tensor::from_fn(shape, |_, _, _, _| standard_normal(&mut rng))
}

/// Shifted away from zero so ReLU kinks and pool ties stay clear of the
/// finite-difference stencil.
fn randn_offset(shape: Shape, seed: u64, label: &str) -> Tensor<f64> {
    let mut rng = rng_for(seed, label);
    Tensor::from_fn(shape, |_, _, _, _| {
        let v: f64 = standard_normal(&mut rng);
        v.signum() * (v.abs() + 0.05)
    })
}

fn init_params(g: &mut Graph<f64>, seed: u64) {
    for i in 0..g.params().len() {
        let info = g.params()[i].clone();
        let t = match info.kind {
            ParamKind::BnGamma => {
                let mut rng = rng_for(seed, &format!("g{i}"));
                Tensor::from_fn(info.shape, |_, _, _, _| {
                    1.0 + 0.3 * standard_normal::<f64>(&mut rng)
                })
            }
            _ => randn(info.shape, seed, &format!("p{i}")),
        };
        g.set_param(i, t).unwrap();
    }
}

fn check(g: &mut Graph<f64>, feeds: &[Tensor<f64>], seeds: &[u64]) -> f64 {
    let mut worst = 0.0f64;
    for &s in seeds {
        init_params(g, s);
        let err = grad_check(g, feeds, s, STEP).unwrap();
        worst = worst.max(err);
    }
    worst
}

#[test]
fn conv_plain_strided_dilated() {
    for (name, spec, in_shape) in [
        ("plain", ConvSpec::same3x3(4, 3, 1), Shape::new(2, 3, 5, 5)),
        (
            "strided",
            ConvSpec::new(3, 2, 3, 3).with_stride(2).with_padding(1),
            Shape::new(1, 2, 7, 7),
        ),
        (
            "dilated",
            ConvSpec::new(2, 2, 3, 3).with_dilation(2).with_padding(2),
            Shape::new(1, 2, 6, 6),
        ),
    ] {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let w = g.param("w", spec.weight_shape(), ParamKind::ConvWeight);
        let b = g.param("b", Shape::new(1, spec.out_ch, 1, 1), ParamKind::Bias);
        let y = g.conv(x, spec, w, Some(b));
        g.mark_output(y);
        let feed = randn(in_shape, 1, name);
        let err = check(&mut g, &[feed], &[1, 2, 3, 4, 5]);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn linear_with_bias() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.input();
    let w = g.param("w", Shape::new(5, 4, 1, 1), ParamKind::LinearWeight);
    let b = g.param("b", Shape::new(1, 5, 1, 1), ParamKind::Bias);
    let y = g.linear(x, w, Some(b));
    g.mark_output(y);
    let feed = randn(Shape::new(3, 4, 1, 1), 2, "lin");
    let err = check(&mut g, &[feed], &[1, 2, 3, 4, 5]);
    assert!(err < 1e-9, "linear is exact: {err}");
}

#[test]
fn batch_norm_train_stats() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.input();
    let gamma = g.param("g", Shape::new(1, 3, 1, 1), ParamKind::BnGamma);
    let beta = g.param("b", Shape::new(1, 3, 1, 1), ParamKind::BnBeta);
    let y = g.batch_norm(x, gamma, beta, 1e-5, 0.1);
    g.mark_output(y);
    let feed = randn(Shape::new(2, 3, 4, 4), 3, "bn");
    let err = check(&mut g, &[feed], &[1, 2, 3, 4, 5]);
    assert!(err < TOL, "batch_norm: {err}");
}

#[test]
fn relu_pool_resize_chain_ops() {
    // Unary ops with no parameters, checked through the input gradient.
    let cases: Vec<(&str, Box<dyn Fn(&mut Graph<f64>, usize) -> usize>)> = vec![
        ("relu", Box::new(|g, x| g.relu(x))),
        (
            "maxpool",
            Box::new(|g, x| g.pool(x, PoolKind::Max, (2, 2), (2, 2))),
        ),
        (
            "avgpool",
            Box::new(|g, x| g.pool(x, PoolKind::Avg, (3, 3), (2, 2))),
        ),
        ("subsample", Box::new(|g, x| g.subsample(x, 0.7))),
        ("pad", Box::new(|g, x| g.pad_channels(x, 5))),
    ];
    for (name, build) in cases {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let y = build(&mut g, x);
        g.mark_output(y);
        let feed = randn_offset(Shape::new(2, 2, 8, 8), 4, name);
        let err = check(&mut g, &[feed], &[1, 2, 3, 4, 5]);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn resize_like_and_merges() {
    let mut g: Graph<f64> = Graph::new();
    let x = g.input();
    let reference = g.input();
    let up = g.resize_like(x, reference);
    let s = g.add(&[up, reference]);
    let cat = g.concat(&[s, reference]);
    g.mark_output(cat);
    let a = randn(Shape::new(1, 2, 3, 3), 5, "rz-a");
    let b = randn(Shape::new(1, 2, 6, 6), 5, "rz-b");
    let err = check(&mut g, &[a, b], &[1, 2, 3, 4, 5]);
    assert!(err < TOL, "resize_like/add/concat: {err}");
}

#[test]
fn conv_batch_norm_composite() {
    let spec = ConvSpec::same3x3(3, 2, 1);
    let mut g: Graph<f64> = Graph::new();
    let x = g.input();
    let w = g.param("w", spec.weight_shape(), ParamKind::ConvWeight);
    let c = g.conv(x, spec, w, None);
    let gamma = g.param("g", Shape::new(1, 3, 1, 1), ParamKind::BnGamma);
    let beta = g.param("bb", Shape::new(1, 3, 1, 1), ParamKind::BnBeta);
    let y = g.batch_norm(c, gamma, beta, 1e-5, 0.1);
    g.mark_output(y);
    let feed = randn(Shape::new(2, 2, 5, 5), 6, "cbn");
    let err = check(&mut g, &[feed], &[1, 2, 3, 4, 5]);
    assert!(err < TOL, "conv+bn: {err}");
}

#[test]
fn composed_prm_b_fragment() {
    let mut cfg = PrmConfig::new(PrmVariant::B, 8, 8);
    cfg.levels = 2;
    cfg.branch_channels = 4;
    let mut g: Graph<f64> = Graph::new();
    let x = g.input();
    let out = build_prm(&mut g, x, &cfg, "prm").unwrap();
    g.mark_output(out);
    let feed = randn(Shape::new(1, 8, 8, 8), 7, "prm");
    let err = check(&mut g, &[feed], &[11, 12, 13, 14, 15]);
    assert!(err < TOL, "prm-b fragment: {err}");
}

#[test]
fn gradient_reaches_every_pyramid_level() {
    for variant in [PrmVariant::A, PrmVariant::B, PrmVariant::Bstar, PrmVariant::C, PrmVariant::D] {
        let mut cfg = PrmConfig::new(variant, 8, 8);
        cfg.levels = 3;
        cfg.branch_channels = 4;
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let out = build_prm(&mut g, x, &cfg, "prm").unwrap();
        g.mark_output(out);
        init_params(&mut g, 21);
        let feed = randn(Shape::new(1, 8, 8, 8), 8, "lvl");
        let pass = g.forward(&[feed], Mode::Train).unwrap();
        let og = randn(Shape::new(1, 8, 8, 8), 9, "og");
        let grads = g.backward(&pass, &[og]).unwrap();
        for (info, grad) in g.params().iter().zip(&grads.params) {
            if info.name.contains(".pyr.") && info.name.ends_with(".w") {
                let norm: f64 = grad.data().iter().map(|v| v * v).sum();
                assert!(norm > 0.0, "{variant:?}: zero gradient at {}", info.name);
            }
        }
    }
}

#[test]
fn first_order_prediction_of_loss_change() {
    // |loss(p + eps d) - loss(p) - eps <g, d>| should scale like eps^2.
    let spec = ConvSpec::same3x3(3, 2, 1);
    let mut g: Graph<f64> = Graph::new();
    let x = g.input();
    let w = g.param("w", spec.weight_shape(), ParamKind::ConvWeight);
    let c = g.conv(x, spec, w, None);
    let gamma = g.param("g", Shape::new(1, 3, 1, 1), ParamKind::BnGamma);
    let beta = g.param("bb", Shape::new(1, 3, 1, 1), ParamKind::BnBeta);
    let y = g.batch_norm(c, gamma, beta, 1e-5, 0.1);
    g.mark_output(y);
    init_params(&mut g, 31);
    let feed = randn(Shape::new(2, 2, 6, 6), 10, "fo");
    let probe = randn(Shape::new(2, 3, 6, 6), 11, "probe");

    let loss = |g: &Graph<f64>| -> f64 {
        let pass = g.forward(core::slice::from_ref(&feed), Mode::Train).unwrap();
        g.outputs_of(&pass)[0]
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let pass = g.forward(core::slice::from_ref(&feed), Mode::Train).unwrap();
    let grads = g.backward(&pass, std::slice::from_ref(&probe)).unwrap();

    let directions: Vec<Tensor<f64>> = g
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| randn(p.shape, 12, &format!("dir{i}")))
        .collect();
    let gdot: f64 = grads
        .params
        .iter()
        .zip(&directions)
        .map(|(gp, d)| gp.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
        .sum();

    let base = loss(&g);
    let mut residual = |eps: f64| -> f64 {
        let originals: Vec<Tensor<f64>> = g.param_values().to_vec();
        for i in 0..directions.len() {
            let mut p = originals[i].clone();
            p.add_scaled(&directions[i], eps);
            g.set_param(i, p).unwrap();
        }
        let l = loss(&g);
        for (i, orig) in originals.into_iter().enumerate() {
            g.set_param(i, orig).unwrap();
        }
        (l - base - eps * gdot).abs()
    };
    let r3 = residual(1e-3);
    let r4 = residual(1e-4);
    // Quadratic scaling with generous slack for higher-order terms.
    assert!(r3 <= 1e4 * (1e-3f64).powi(2), "r(1e-3) = {r3}");
    assert!(r4 <= 1e4 * (1e-4f64).powi(2), "r(1e-4) = {r4}");
}
