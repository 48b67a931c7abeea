//! Deterministic bilinear resampling. Sample positions are pixel centers:
//! `src = (dst + 0.5) * (in / out) - 0.5`, clamped to the borders. The
//! same rule is used for both down- and up-sampling, so a same-size
//! resize is the identity and constant fields are preserved exactly.

#[allow(unused_imports)] // needed for no_std float math, redundant with std
use num_traits::Float;
use alloc::vec::Vec;

use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-axis interpolation taps: (low index, high index, high weight).
fn axis_taps<T: Real>(in_size: usize, out_size: usize) -> Vec<(usize, usize, T)> {
    let scale = in_size as f64 / out_size as f64;
    (0..out_size)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_size - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_size - 1);
            (lo, hi, T::from_f64(src - lo as f64))
        })
        .collect()
}

/// Bilinear resize to an explicit output size.
pub fn resize_bilinear<T: Real>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be >= 1 per axis"));
    }
    let s = input.shape();
    let ys = axis_taps::<T>(s.h, out_h);
    let xs = axis_taps::<T>(s.w, out_w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let r0 = &src[y0 * s.w..y0 * s.w + s.w];
                let r1 = &src[y1 * s.w..y1 * s.w + s.w];
                let drow = &mut dst[oy * out_w..(oy + 1) * out_w];
                for (d, &(x0, x1, fx)) in drow.iter_mut().zip(&xs) {
                    let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    *d = top + fy * (bot - top);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of `resize_bilinear`: scatter the output gradient through the
/// interpolation weights.
pub fn resize_bilinear_backward<T: Real>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = input_shape;
    let (oh, ow) = (grad_out.shape().h, grad_out.shape().w);
    let ys = axis_taps::<T>(s.h, oh);
    let xs = axis_taps::<T>(s.w, ow);
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let dst = grad.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (&g, &(x0, x1, fx)) in go[oy * ow..(oy + 1) * ow].iter().zip(&xs) {
                    let one = T::one();
                    dst[y0 * s.w + x0] += g * (one - fy) * (one - fx);
                    dst[y0 * s.w + x1] += g * (one - fy) * fx;
                    dst[y1 * s.w + x0] += g * fy * (one - fx);
                    dst[y1 * s.w + x1] += g * fy * fx;
                }
            }
        }
    }
    Ok(grad)
}

/// Output size under a fractional ratio: round-half-up of `ratio * size`,
/// floored at 1.
pub fn fractional_size(size: usize, ratio: f64) -> usize {
    ((ratio * size as f64 + 0.5).floor() as usize).max(1)
}

/// Downsample by a fractional ratio in (0, 1]; ratio 1 is the identity.
pub fn fractional_subsample<T: Real>(input: &Tensor<T>, ratio: f64) -> Result<Tensor<T>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid("fractional_subsample ratio must be in (0, 1]"));
    }
    if ratio == 1.0 {
        return Ok(input.clone());
    }
    let s = input.shape();
    resize_bilinear(input, fractional_size(s.h, ratio), fractional_size(s.w, ratio))
}
