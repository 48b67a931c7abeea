//! Max- and average-pooling with argmax bookkeeping for backward.

use alloc::vec;
use alloc::vec::Vec;

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

fn out_size(input: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid("pool window/stride must be positive"));
    }
    if window > input {
        return Err(Error::invalid("pool window larger than input"));
    }
    Ok((input - window) / stride + 1)
}

/// Pools each plane. For max pooling the returned index vector holds, per
/// output element, the flat in-plane offset of the winning input; ties go
/// to the first element in row-major window order.
pub fn pool<T: Real>(
    input: &Tensor<T>,
    kind: PoolKind,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor<T>, Option<Vec<u32>>)> {
    let s = input.shape();
    let oh = out_size(s.h, window.0, stride.0)?;
    let ow = out_size(s.w, window.1, stride.1)?;
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = match kind {
        PoolKind::Max => Some(vec![0u32; out_shape.numel()]),
        PoolKind::Avg => None,
    };
    let inv_area = T::one() / T::from_usize(window.0 * window.1);
    let mut oi = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let y0 = oy * stride.0;
                    let x0 = ox * stride.1;
                    match kind {
                        PoolKind::Max => {
                            let mut best = plane[y0 * s.w + x0];
                            let mut best_at = (y0 * s.w + x0) as u32;
                            for ky in 0..window.0 {
                                for kx in 0..window.1 {
                                    let idx = (y0 + ky) * s.w + (x0 + kx);
                                    if plane[idx] > best {
                                        best = plane[idx];
                                        best_at = idx as u32;
                                    }
                                }
                            }
                            out.data_mut()[oi] = best;
                            argmax.as_mut().unwrap()[oi] = best_at;
                        }
                        PoolKind::Avg => {
                            let mut acc = T::zero();
                            for ky in 0..window.0 {
                                let row = &plane[(y0 + ky) * s.w + x0..(y0 + ky) * s.w + x0 + window.1];
                                acc += row.iter().copied().sum::<T>();
                            }
                            out.data_mut()[oi] = acc * inv_area;
                        }
                    }
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn pool_backward<T: Real>(
    input_shape: Shape,
    kind: PoolKind,
    window: (usize, usize),
    stride: (usize, usize),
    grad_out: &Tensor<T>,
    argmax: Option<&[u32]>,
) -> Result<Tensor<T>> {
    let mut grad = Tensor::zeros(input_shape);
    let s = input_shape;
    let (oh, ow) = (grad_out.shape().h, grad_out.shape().w);
    let inv_area = T::one() / T::from_usize(window.0 * window.1);
    let mut oi = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = grad.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out.data()[oi];
                    match kind {
                        PoolKind::Max => {
                            let idx = argmax
                                .ok_or_else(|| Error::MissingCache {
                                    context: "max-pool argmax".into(),
                                })?[oi] as usize;
                            plane[idx] += g;
                        }
                        PoolKind::Avg => {
                            let y0 = oy * stride.0;
                            let x0 = ox * stride.1;
                            let share = g * inv_area;
                            for ky in 0..window.0 {
                                for v in
                                    &mut plane[(y0 + ky) * s.w + x0..(y0 + ky) * s.w + x0 + window.1]
                                {
                                    *v += share;
                                }
                            }
                        }
                    }
                    oi += 1;
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    #[test]
    fn max_of_2x2() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = pool(&x, PoolKind::Max, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn avg_of_2x2() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = pool(&x, PoolKind::Avg, (2, 2), (2, 2)).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = rng_from_seed(3);
        let x = Tensor::from_fn(Shape::new(2, 3, 7, 7), |_, _, _, _| standard_normal::<f64>(&mut rng));
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let (y, _) = pool(&x, kind, (3, 3), (2, 2)).unwrap();
            assert_eq!(y.shape(), Shape::new(2, 3, 3, 3));
            for n in 0..2 {
                for c in 0..3 {
                    for oy in 0..3 {
                        for ox in 0..3 {
                            let mut m = f64::NEG_INFINITY;
                            let mut s = 0.0;
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let v = x.at(n, c, oy * 2 + ky, ox * 2 + kx);
                                    m = m.max(v);
                                    s += v;
                                }
                            }
                            let want = match kind {
                                PoolKind::Max => m,
                                PoolKind::Avg => s / 9.0,
                            };
                            assert!((y.at(n, c, oy, ox) - want).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_empty_window() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        assert!(pool(&x, PoolKind::Max, (0, 2), (1, 1)).is_err());
    }
}
