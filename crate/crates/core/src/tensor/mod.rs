//! Dense rank-4 tensors in N,C,H,W row-major layout and the forward
//! kernels every higher module composes.

mod conv;
mod gemm;
mod linear;
mod norm;
mod pool;
mod resize;

pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvSpec};
pub use gemm::{gemm_nn, gemm_nt, gemm_tn};
pub use linear::{linear, linear_backward, LinearGrads};
pub use norm::{batch_norm, batch_norm_backward, BnBatchStats, BnGrads, BnMode, RunningStats};
pub use pool::{pool, pool_backward, PoolKind};
pub use resize::{fractional_size, fractional_subsample, resize_bilinear, resize_bilinear_backward};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Shape of a rank-4 tensor: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn valid(&self) -> bool {
        self.n >= 1 && self.c >= 1 && self.h >= 1 && self.w >= 1
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 array. Matrices are carried as `(rows, cols, 1, 1)`;
/// vectors as `(1, len, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if !shape.valid() {
            return Err(Error::invalid("tensor dimensions must all be >= 1"));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor data length",
                [shape.numel()],
                [data.len()],
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Matrix constructor: `(rows, cols)` carried as `(rows, cols, 1, 1)`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Tensor::new(Shape::new(rows, cols, 1, 1), data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && h < self.shape.h && w < self.shape.w);
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    /// One image plane `(c, :, :)` of batch item `n`, as a flat slice.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape.h * self.shape.w;
        let start = (n * self.shape.c + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.shape.h * self.shape.w;
        let start = (n * self.shape.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "elementwise operands",
                self.shape.dims(),
                other.shape.dims(),
            ));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Mean and (biased) variance over every element.
    pub fn moments(&self) -> (T, T) {
        let n = T::from_usize(self.data.len());
        let mean = self.data.iter().copied().sum::<T>() / n;
        let var = self
            .data
            .iter()
            .map(|&x| (x - mean) * (x - mean))
            .sum::<T>()
            / n;
        (mean, var)
    }

    /// Elementwise max(0, x).
    pub fn relu(&self) -> Self {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    /// Channel-axis concatenation; all inputs must agree on n, h, w.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (n, h, w) = (first.shape.n, first.shape.h, first.shape.w);
        let mut c_total = 0;
        for p in parts {
            if p.shape.n != n || p.shape.h != h || p.shape.w != w {
                return Err(Error::shape(
                    "concat operand",
                    first.shape.dims(),
                    p.shape.dims(),
                ));
            }
            c_total += p.shape.c;
        }
        let shape = Shape::new(n, c_total, h, w);
        let mut out = Tensor::zeros(shape);
        for ni in 0..n {
            let mut c_off = 0;
            for p in parts {
                for ci in 0..p.shape.c {
                    out.plane_mut(ni, c_off + ci).copy_from_slice(p.plane(ni, ci));
                }
                c_off += p.shape.c;
            }
        }
        Ok(out)
    }

    /// Zero-pad channels up to `c_out` (used when a narrow branch is summed
    /// into a wider stream).
    pub fn pad_channels(&self, c_out: usize) -> Result<Self> {
        if c_out < self.shape.c {
            return Err(Error::invalid("pad_channels target narrower than input"));
        }
        let shape = Shape::new(self.shape.n, c_out, self.shape.h, self.shape.w);
        let mut out = Tensor::zeros(shape);
        for n in 0..self.shape.n {
            for c in 0..self.shape.c {
                out.plane_mut(n, c).copy_from_slice(self.plane(n, c));
            }
        }
        Ok(out)
    }

    /// First `c_out` channels (adjoint of `pad_channels`).
    pub fn narrow_channels(&self, c_out: usize) -> Result<Self> {
        if c_out > self.shape.c {
            return Err(Error::invalid("narrow_channels target wider than input"));
        }
        let shape = Shape::new(self.shape.n, c_out, self.shape.h, self.shape.w);
        let mut out = Tensor::zeros(shape);
        for n in 0..self.shape.n {
            for c in 0..c_out {
                out.plane_mut(n, c).copy_from_slice(self.plane(n, c));
            }
        }
        Ok(out)
    }
}
