//! Batch normalization over (N, H, W) per channel.

use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Exponential-moving-average statistics kept across training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Per-channel statistics used by one forward call; backward needs them.
#[derive(Debug, Clone)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// True when the stats were computed from the batch (train mode);
    /// false when they came from running averages and are constants.
    pub from_batch: bool,
}

/// Normalizes per channel, then applies the affine transform. In train
/// mode the statistics come from the batch and, when `running` is given,
/// the running averages move by `momentum` toward them. In eval mode the
/// running statistics are required and used as constants.
pub fn batch_norm<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
    mode: BnMode,
    mut running: Option<&mut RunningStats<T>>,
    momentum: T,
) -> Result<(Tensor<T>, BnBatchStats<T>)> {
    let s = input.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(Error::shape("batch_norm gamma/beta", [s.c], [gamma.len()]));
    }
    if eps <= T::zero() {
        return Err(Error::invalid("batch_norm eps must be positive"));
    }
    let m = s.n * s.h * s.w;
    let stats = match mode {
        BnMode::Train => {
            if m == 1 {
                return Err(Error::invalid(
                    "batch_norm in train mode with a single element per channel is degenerate",
                ));
            }
            let inv_m = T::one() / T::from_usize(m);
            let mut mean = vec![T::zero(); s.c];
            let mut var = vec![T::zero(); s.c];
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    acc += input.plane(n, c).iter().copied().sum::<T>();
                }
                mean[c] = acc * inv_m;
                let mut vacc = T::zero();
                for n in 0..s.n {
                    for &x in input.plane(n, c) {
                        let d = x - mean[c];
                        vacc += d * d;
                    }
                }
                var[c] = vacc * inv_m;
            }
            if let Some(r) = running.as_deref_mut() {
                if r.mean.len() != s.c {
                    return Err(Error::shape("running stats", [s.c], [r.mean.len()]));
                }
                let keep = T::one() - momentum;
                for c in 0..s.c {
                    r.mean[c] = keep * r.mean[c] + momentum * mean[c];
                    r.var[c] = keep * r.var[c] + momentum * var[c];
                }
            }
            BnBatchStats {
                inv_std: var.iter().map(|&v| (v + eps).sqrt().recip()).collect(),
                mean,
                from_batch: true,
            }
        }
        BnMode::Eval => {
            let r = running.ok_or_else(|| Error::MissingCache {
                context: "batch_norm eval mode needs running statistics".into(),
            })?;
            if r.mean.len() != s.c {
                return Err(Error::shape("running stats", [s.c], [r.mean.len()]));
            }
            BnBatchStats {
                mean: r.mean.clone(),
                inv_std: r.var.iter().map(|&v| (v + eps).sqrt().recip()).collect(),
                from_batch: false,
            }
        }
    };

    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, istd, g, b) = (stats.mean[c], stats.inv_std[c], gamma[c], beta[c]);
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (o, &x) in dst.iter_mut().zip(src) {
                *o = g * (x - mu) * istd + b;
            }
        }
    }
    Ok((out, stats))
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward through batch normalization. With batch statistics the mean
/// and variance are functions of the input; with running statistics they
/// are constants and the map is a per-channel affine function.
pub fn batch_norm_backward<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    stats: &BnBatchStats<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>> {
    let s = input.shape();
    if grad_out.shape() != s {
        return Err(Error::shape("batch_norm grad_out", s.dims(), grad_out.shape().dims()));
    }
    let m = T::from_usize(s.n * s.h * s.w);
    let mut grad_input = Tensor::zeros(s);
    let mut grad_gamma = vec![T::zero(); s.c];
    let mut grad_beta = vec![T::zero(); s.c];

    for c in 0..s.c {
        let (mu, istd, g) = (stats.mean[c], stats.inv_std[c], gamma[c]);
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for n in 0..s.n {
            let x = input.plane(n, c);
            let dy = grad_out.plane(n, c);
            for (&xv, &dyv) in x.iter().zip(dy) {
                sum_dy += dyv;
                sum_dy_xhat += dyv * (xv - mu) * istd;
            }
        }
        grad_beta[c] = sum_dy;
        grad_gamma[c] = sum_dy_xhat;
        if stats.from_batch {
            let k = g * istd / m;
            for n in 0..s.n {
                let x = input.plane(n, c);
                let start_dy: Vec<T> = grad_out.plane(n, c).to_vec();
                let dst = grad_input.plane_mut(n, c);
                for ((d, &xv), &dyv) in dst.iter_mut().zip(x).zip(&start_dy) {
                    let xhat = (xv - mu) * istd;
                    *d = k * (m * dyv - sum_dy - xhat * sum_dy_xhat);
                }
            }
        } else {
            let k = g * istd;
            for n in 0..s.n {
                let src = grad_out.plane(n, c).to_vec();
                let dst = grad_input.plane_mut(n, c);
                for (d, &dyv) in dst.iter_mut().zip(&src) {
                    *d = k * dyv;
                }
            }
        }
    }
    Ok(BnGrads {
        input: grad_input,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};
    use crate::tensor::Shape;

    #[test]
    fn constant_channels_map_to_zero() {
        let x = Tensor::from_fn(Shape::new(2, 3, 4, 4), |_, c, _, _| c as f64 * 7.0);
        let (y, _) = batch_norm(&x, &[1.0; 3], &[0.0; 3], 1e-5, BnMode::Train, None, 0.1).unwrap();
        for &v in y.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn zero_gamma_broadcasts_beta() {
        let mut rng = rng_from_seed(1);
        let x = Tensor::from_fn(Shape::new(2, 2, 3, 3), |_, _, _, _| standard_normal::<f64>(&mut rng));
        let (y, _) = batch_norm(&x, &[0.0; 2], &[4.0, -2.0], 1e-5, BnMode::Train, None, 0.1).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 4.0));
            assert!(y.plane(n, 1).iter().all(|&v| v == -2.0));
        }
    }

    #[test]
    fn normalizes_moments_before_affine() {
        let mut rng = rng_from_seed(2);
        let x = Tensor::from_fn(Shape::new(8, 4, 5, 5), |_, _, _, _| {
            standard_normal::<f64>(&mut rng) * 3.0 + 1.5
        });
        // Tiny eps so the normalized variance is 1 to oracle precision.
        let (y, _) = batch_norm(&x, &[1.0; 4], &[0.0; 4], 1e-13, BnMode::Train, None, 0.1).unwrap();
        let m = (8 * 5 * 5) as f64;
        for c in 0..4 {
            let mut mean = 0.0;
            let mut sq = 0.0;
            for n in 0..8 {
                for &v in y.plane(n, c) {
                    mean += v;
                    sq += v * v;
                }
            }
            mean /= m;
            let var = sq / m - mean * mean;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn rejects_degenerate_single_element() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 3, 1, 1));
        let r = batch_norm(&x, &[1.0; 3], &[0.0; 3], 1e-5, BnMode::Train, None, 0.1);
        assert!(r.is_err());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(Shape::new(2, 3, 2, 2));
        let r = batch_norm(&x, &[1.0; 2], &[0.0; 2], 1e-5, BnMode::Train, None, 0.1);
        assert!(r.is_err());
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let x = Tensor::from_fn(Shape::new(4, 1, 2, 2), |n, _, h, w| (n + h + w) as f64);
        let mut running = RunningStats::new(1);
        let (_, stats) =
            batch_norm(&x, &[1.0], &[0.0], 1e-5, BnMode::Train, Some(&mut running), 0.1).unwrap();
        assert!((running.mean[0] - 0.1 * stats.mean[0]).abs() < 1e-12);
        let batch_var = 1.0 / (stats.inv_std[0] * stats.inv_std[0]) - 1e-5;
        assert!((running.var[0] - (0.9 + 0.1 * batch_var)).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = Tensor::from_fn(Shape::new(2, 1, 2, 2), |n, _, h, w| (n * 4 + h * 2 + w) as f64);
        let mut running = RunningStats {
            mean: vec![2.0],
            var: vec![4.0],
        };
        let (y, _) = batch_norm(
            &x,
            &[1.0],
            &[0.0],
            1e-12,
            BnMode::Eval,
            Some(&mut running),
            0.1,
        )
        .unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            assert!((v - (i as f64 - 2.0) / 2.0).abs() < 1e-9);
        }
    }
}
