//! Central finite-difference verification of backward sweeps.

use alloc::vec::Vec;

use super::{Graph, Mode};
use crate::error::{Error, Result};
use crate::rng::{rng_for, standard_normal};
use crate::tensor::Tensor;

/// Checks every parameter and input coordinate of `graph` against central
/// finite differences of the scalar probe loss `sum_o <r_o, y_o>`, where
/// the `r_o` are fixed random tensors derived from `seed`. Returns the max
/// over coordinates of `|analytic - numeric| / max(1, |analytic|)`.
///
/// Double precision only; `step` around 1e-5 is appropriate there.
pub fn grad_check(graph: &mut Graph<f64>, feeds: &[Tensor<f64>], seed: u64, step: f64) -> Result<f64> {
    let pass = graph.forward(feeds, Mode::Train)?;
    let mut rng = rng_for(seed, "grad-check-probe");
    let probes: Vec<Tensor<f64>> = graph
        .outputs_of(&pass)
        .iter()
        .map(|y| {
            let shape = y.shape();
            Tensor::from_fn(shape, |_, _, _, _| standard_normal(&mut rng))
        })
        .collect();

    let loss_of = |g: &Graph<f64>, feeds: &[Tensor<f64>]| -> Result<f64> {
        let pass = g.forward(feeds, Mode::Train)?;
        let mut acc = 0.0;
        for (y, r) in g.outputs_of(&pass).iter().zip(&probes) {
            acc += y
                .data()
                .iter()
                .zip(r.data())
                .map(|(&a, &b)| a * b)
                .sum::<f64>();
        }
        if !acc.is_finite() {
            return Err(Error::NonFinite {
                context: "grad_check probe loss".into(),
            });
        }
        Ok(acc)
    };

    let analytic = graph.backward(&pass, &probes)?;
    let mut max_err = 0.0f64;

    for p in 0..graph.params().len() {
        for i in 0..graph.param_values()[p].numel() {
            let orig = graph.param_values()[p].data()[i];
            graph.param_values_mut()[p].data_mut()[i] = orig + step;
            let up = loss_of(graph, feeds)?;
            graph.param_values_mut()[p].data_mut()[i] = orig - step;
            let down = loss_of(graph, feeds)?;
            graph.param_values_mut()[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.params[p].data()[i];
            max_err = max_err.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }

    let mut feeds_pert = feeds.to_vec();
    for (f, analytic_in) in (0..feeds.len()).zip(&analytic.inputs) {
        for i in 0..feeds[f].numel() {
            let orig = feeds[f].data()[i];
            feeds_pert[f].data_mut()[i] = orig + step;
            let up = loss_of(graph, &feeds_pert)?;
            feeds_pert[f].data_mut()[i] = orig - step;
            let down = loss_of(graph, &feeds_pert)?;
            feeds_pert[f].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic_in.data()[i];
            max_err = max_err.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }

    if !max_err.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check error".into(),
        });
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ParamKind;
    use crate::tensor::Shape;

    #[test]
    fn linear_layer_is_exact() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let w = g.param("w", Shape::new(3, 4, 1, 1), ParamKind::LinearWeight);
        let b = g.param("b", Shape::new(1, 3, 1, 1), ParamKind::Bias);
        let y = g.linear(x, w, Some(b));
        g.mark_output(y);
        let mut rng = rng_for(1, "pt");
        for i in 0..g.params().len() {
            let shape = g.params()[i].shape;
            let t = Tensor::from_fn(shape, |_, _, _, _| standard_normal(&mut rng));
            g.set_param(i, t).unwrap();
        }
        let feed = Tensor::from_fn(Shape::new(2, 4, 1, 1), |_, _, _, _| standard_normal(&mut rng));
        let err = grad_check(&mut g, &[feed], 7, 1e-5).unwrap();
        assert!(err < 1e-10, "linear is exactly linear, got {err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input();
        let r = g.relu(x);
        g.mark_output(r);
        // Keep |x| > 0.1 so the finite-difference stencil never crosses 0.
        let mut rng = rng_for(2, "pt");
        let feed = Tensor::from_fn(Shape::new(2, 3, 4, 4), |_, _, _, _| {
            let v: f64 = standard_normal(&mut rng);
            v.signum() * (v.abs() + 0.1)
        });
        let err = grad_check(&mut g, &[feed], 8, 1e-5).unwrap();
        assert!(err < 1e-7, "relu is piecewise linear, got {err}");
    }
}
