//! 2-D convolution (cross-correlation) via im2col + GEMM, with the
//! matching input/weight/bias gradients.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// Geometry of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    pub fn new(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        ConvSpec {
            out_ch,
            in_ch,
            kh,
            kw,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn with_dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    /// 1x1, stride 1, no padding.
    pub fn pointwise(out_ch: usize, in_ch: usize) -> Self {
        ConvSpec::new(out_ch, in_ch, 1, 1)
    }

    /// 3x3 "same" convolution: padding matches the dilation so the output
    /// keeps the input's spatial size.
    pub fn same3x3(out_ch: usize, in_ch: usize, dilation: usize) -> Self {
        ConvSpec::new(out_ch, in_ch, 3, 3)
            .with_padding(dilation)
            .with_dilation(dilation)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_ch, self.in_ch, self.kh, self.kw)
    }

    fn out_dim(&self, input: usize, axis: usize) -> Result<usize> {
        let (k, s, p, d) = match axis {
            0 => (self.kh, self.stride.0, self.padding.0, self.dilation.0),
            _ => (self.kw, self.stride.1, self.padding.1, self.dilation.1),
        };
        if s == 0 || d == 0 || k == 0 {
            return Err(Error::invalid("conv stride/dilation/kernel must be positive"));
        }
        let span = d * (k - 1) + 1;
        let padded = input + 2 * p;
        if padded < span {
            return Err(Error::EmptyOutput {
                context: format!(
                    "conv output: input {input} + 2*pad {p} smaller than kernel span {span}"
                ),
            });
        }
        Ok((padded - span) / s + 1)
    }

    /// Output spatial size: floor((in + 2p - d(k-1) - 1) / s) + 1, which
    /// must be >= 1.
    pub fn out_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        Ok((self.out_dim(in_h, 0)?, self.out_dim(in_w, 1)?))
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_ch {
            return Err(Error::shape(
                "conv input channels",
                [self.in_ch],
                [input.c],
            ));
        }
        let (oh, ow) = self.out_size(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_ch, oh, ow))
    }
}

/// Valid output-column range for one kernel tap, i.e. the `o` for which
/// `o*stride + tap*dilation - pad` lands inside `[0, input)`.
#[inline]
fn valid_range(input: usize, out: usize, stride: usize, pad: usize, tap_off: usize) -> (usize, usize, isize) {
    // in-coordinate for output o: i = o*stride + tap_off - pad
    let base = tap_off as isize - pad as isize;
    let lo = if base >= 0 {
        0
    } else {
        ((-base) as usize).div_ceil(stride)
    };
    let hi_raw = input as isize - 1 - base;
    let hi = if hi_raw < 0 {
        0
    } else {
        ((hi_raw as usize) / stride + 1).min(out)
    };
    (lo.min(hi), hi, base)
}

/// Lower one batch item into a (in_ch*kh*kw) x (oh*ow) matrix.
fn im2col<T: Real>(input: &Tensor<T>, n: usize, spec: &ConvSpec, oh: usize, ow: usize, col: &mut [T]) {
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let in_h = input.shape().h;
    let in_w = input.shape().w;
    col.fill(T::zero());
    let mut row = 0;
    for c in 0..spec.in_ch {
        let plane = input.plane(n, c);
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let dst_row = &mut col[row * oh * ow..(row + 1) * oh * ow];
                let (oy_lo, oy_hi, ybase) = valid_range(in_h, oh, sh, ph, ky * dh);
                let (ox_lo, ox_hi, xbase) = valid_range(in_w, ow, sw, pw, kx * dw);
                for oy in oy_lo..oy_hi {
                    let iy = (oy * sh) as isize + ybase;
                    let src = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                    let dst = &mut dst_row[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        let ix0 = (ox_lo as isize + xbase) as usize;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * sw) as isize + xbase;
                            dst[ox] = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add the column matrix back into an image.
fn col2im<T: Real>(col: &[T], spec: &ConvSpec, oh: usize, ow: usize, grad: &mut Tensor<T>, n: usize) {
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let (dh, dw) = spec.dilation;
    let in_h = grad.shape().h;
    let in_w = grad.shape().w;
    let mut row = 0;
    for c in 0..spec.in_ch {
        let plane = grad.plane_mut(n, c);
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let src_row = &col[row * oh * ow..(row + 1) * oh * ow];
                let (oy_lo, oy_hi, ybase) = valid_range(in_h, oh, sh, ph, ky * dh);
                let (ox_lo, ox_hi, xbase) = valid_range(in_w, ow, sw, pw, kx * dw);
                for oy in oy_lo..oy_hi {
                    let iy = ((oy * sh) as isize + ybase) as usize;
                    let dst = &mut plane[iy * in_w..(iy + 1) * in_w];
                    let src = &src_row[oy * ow..(oy + 1) * ow];
                    if sw == 1 {
                        let ix0 = (ox_lo as isize + xbase) as usize;
                        for (d, &s) in dst[ix0..ix0 + (ox_hi - ox_lo)].iter_mut().zip(&src[ox_lo..ox_hi]) {
                            *d += s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ((ox * sw) as isize + xbase) as usize;
                            dst[ix] += src[ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn check_weight<T: Real>(spec: &ConvSpec, weight: &Tensor<T>) -> Result<()> {
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv weight",
            spec.weight_shape().dims(),
            weight.shape().dims(),
        ));
    }
    Ok(())
}

/// Cross-correlation of `input` with `weight` under `spec`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    check_weight(spec, weight)?;
    if let Some(b) = bias {
        if b.len() != spec.out_ch {
            return Err(Error::shape("conv bias", [spec.out_ch], [b.len()]));
        }
    }
    let out_shape = spec.out_shape(input.shape())?;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let k = spec.in_ch * spec.kh * spec.kw;
    let cols = oh * ow;
    let mut out = Tensor::zeros(out_shape);

    // Pointwise stride-1 convs skip the lowering: the input planes already
    // form the column matrix.
    let pointwise = spec.kh == 1 && spec.kw == 1 && spec.stride == (1, 1) && spec.padding == (0, 0);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * cols] };

    for n in 0..input.shape().n {
        let (b, c_out): (&[T], _) = if pointwise {
            let hw = input.shape().h * input.shape().w;
            let start = n * spec.in_ch * hw;
            (&input.data()[start..start + spec.in_ch * hw], n)
        } else {
            im2col(input, n, spec, oh, ow, &mut col);
            (&col[..], n)
        };
        let dst_start = c_out * spec.out_ch * cols;
        gemm_nn(
            spec.out_ch,
            k,
            cols,
            weight.data(),
            b,
            &mut out.data_mut()[dst_start..dst_start + spec.out_ch * cols],
        );
    }
    if let Some(bias) = bias {
        for n in 0..out.shape().n {
            for c in 0..spec.out_ch {
                let bv = bias[c];
                for v in out.plane_mut(n, c) {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution.
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

/// Backward pass: gradients w.r.t. input, weight, and (optionally) bias
/// from the output gradient.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_bias: bool,
) -> Result<ConvGrads<T>> {
    check_weight(spec, weight)?;
    let out_shape = spec.out_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape(
            "conv grad_out",
            out_shape.dims(),
            grad_out.shape().dims(),
        ));
    }
    let (oh, ow) = (out_shape.h, out_shape.w);
    let k = spec.in_ch * spec.kh * spec.kw;
    let cols = oh * ow;

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    let pointwise = spec.kh == 1 && spec.kw == 1 && spec.stride == (1, 1) && spec.padding == (0, 0);
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * cols] };
    let mut dcol = vec![T::zero(); k * cols];

    for n in 0..input.shape().n {
        let hw = input.shape().h * input.shape().w;
        let go = &grad_out.data()[n * spec.out_ch * cols..(n + 1) * spec.out_ch * cols];
        // dW += dY · colᵀ
        if pointwise {
            let x = &input.data()[n * spec.in_ch * hw..(n + 1) * spec.in_ch * hw];
            gemm_nt(spec.out_ch, cols, k, go, x, grad_weight.data_mut());
        } else {
            im2col(input, n, spec, oh, ow, &mut col);
            gemm_nt(spec.out_ch, cols, k, go, &col, grad_weight.data_mut());
        }
        // dcol = Wᵀ · dY, then scatter back.
        if pointwise {
            let dst = &mut grad_input.data_mut()[n * spec.in_ch * hw..(n + 1) * spec.in_ch * hw];
            gemm_tn(k, spec.out_ch, cols, weight.data(), go, dst);
        } else {
            dcol.fill(T::zero());
            gemm_tn(k, spec.out_ch, cols, weight.data(), go, &mut dcol);
            col2im(&dcol, spec, oh, ow, &mut grad_input, n);
        }
    }

    let bias = want_bias.then(|| {
        let mut b = vec![T::zero(); spec.out_ch];
        for n in 0..grad_out.shape().n {
            for (c, acc) in b.iter_mut().enumerate() {
                *acc += grad_out.plane(n, c).iter().copied().sum::<T>();
            }
        }
        b
    });

    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    /// Direct nested-loop convolution, the oracle the spec names.
    pub(crate) fn conv2d_oracle(
        input: &Tensor<f64>,
        spec: &ConvSpec,
        weight: &Tensor<f64>,
        bias: Option<&[f64]>,
    ) -> Tensor<f64> {
        let out_shape = spec.out_shape(input.shape()).unwrap();
        let mut out = Tensor::zeros(out_shape);
        for n in 0..out_shape.n {
            for oc in 0..out_shape.c {
                for oy in 0..out_shape.h {
                    for ox in 0..out_shape.w {
                        let mut acc = bias.map_or(0.0, |b| b[oc]);
                        for ic in 0..spec.in_ch {
                            for ky in 0..spec.kh {
                                for kx in 0..spec.kw {
                                    let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize
                                        - spec.padding.0 as isize;
                                    let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize
                                        - spec.padding.1 as isize;
                                    if iy >= 0
                                        && (iy as usize) < input.shape().h
                                        && ix >= 0
                                        && (ix as usize) < input.shape().w
                                    {
                                        acc += input.at(n, ic, iy as usize, ix as usize)
                                            * weight.at(oc, ic, ky, kx);
                                    }
                                }
                            }
                        }
                        out.set(n, oc, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    fn randn(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = rng_from_seed(seed);
        Tensor::from_fn(shape, |_, _, _, _| standard_normal(&mut rng))
    }

    #[test]
    fn identity_pointwise_kernel() {
        let x = randn(Shape::new(1, 3, 4, 4), 1);
        let mut w = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for c in 0..3 {
            w.set(c, c, 0, 0, 1.0);
        }
        let y = conv2d(&x, &ConvSpec::pointwise(3, 3), &w, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_3x3_sums_to_nine() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &ConvSpec::new(1, 1, 3, 3), &w, None).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn dilated_conv_matches_oracle() {
        let x = randn(Shape::new(2, 4, 8, 8), 2);
        let w = randn(Shape::new(6, 4, 3, 3), 3);
        let spec = ConvSpec::new(6, 4, 3, 3).with_dilation(2).with_padding(2);
        let b: Vec<f64> = (0..6).map(|i| i as f64 * 0.1).collect();
        let got = conv2d(&x, &spec, &w, Some(&b)).unwrap();
        let want = conv2d_oracle(&x, &spec, &w, Some(&b));
        assert_eq!(got.shape(), want.shape());
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn strided_conv_matches_oracle() {
        let x = randn(Shape::new(1, 2, 9, 7), 4);
        let w = randn(Shape::new(3, 2, 3, 3), 5);
        let spec = ConvSpec::new(3, 2, 3, 3).with_stride(2).with_padding(1);
        let got = conv2d(&x, &spec, &w, None).unwrap();
        let want = conv2d_oracle(&x, &spec, &w, None);
        assert_eq!(got.shape(), want.shape());
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = randn(Shape::new(1, 3, 4, 4), 6);
        let w = randn(Shape::new(2, 2, 1, 1), 7);
        let err = conv2d(&x, &ConvSpec::pointwise(2, 2), &w, None).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn rejects_empty_output() {
        let x = randn(Shape::new(1, 1, 2, 2), 8);
        let w = randn(Shape::new(1, 1, 3, 3), 9);
        let err = conv2d(&x, &ConvSpec::new(1, 1, 3, 3), &w, None).unwrap_err();
        assert!(matches!(err, Error::EmptyOutput { .. }));
    }

    #[test]
    fn conv_is_linear_in_input() {
        let spec = ConvSpec::same3x3(3, 2, 1);
        let w = randn(spec.weight_shape(), 10);
        let x = randn(Shape::new(1, 2, 5, 5), 11);
        let y = randn(Shape::new(1, 2, 5, 5), 12);
        let (a, b) = (0.7, -1.3);
        let mixed = x.zip_map(&y, |xv, yv| a * xv + b * yv).unwrap();
        let lhs = conv2d(&mixed, &spec, &w, None).unwrap();
        let cx = conv2d(&x, &spec, &w, None).unwrap();
        let cy = conv2d(&y, &spec, &w, None).unwrap();
        for ((l, &gx), &gy) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            assert!((l - (a * gx + b * gy)).abs() < 1e-10);
        }
    }
}
