//! Affine map on matrices: y = x·Wᵀ + b.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

fn as_matrix<T: Real>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::shape(what, [s.n, s.c, 1, 1], s.dims()));
    }
    Ok((s.n, s.c))
}

/// `input` is (batch, in), `weight` is (out, in), bias has length `out`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let (batch, d_in) = as_matrix(input, "linear input")?;
    let (d_out, w_in) = as_matrix(weight, "linear weight")?;
    if w_in != d_in {
        return Err(Error::shape("linear inner dimension", [d_in], [w_in]));
    }
    if let Some(b) = bias {
        if b.len() != d_out {
            return Err(Error::shape("linear bias", [d_out], [b.len()]));
        }
    }
    let mut out = Tensor::matrix(batch, d_out, vec![T::zero(); batch * d_out])?;
    gemm_nt(batch, d_in, d_out, input.data(), weight.data(), out.data_mut());
    if let Some(b) = bias {
        for r in 0..batch {
            for (o, &bv) in out.data_mut()[r * d_out..(r + 1) * d_out].iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    Ok(out)
}

pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

pub fn linear_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_bias: bool,
) -> Result<LinearGrads<T>> {
    let (batch, d_in) = as_matrix(input, "linear input")?;
    let (d_out, _) = as_matrix(weight, "linear weight")?;
    let (gb, go) = as_matrix(grad_out, "linear grad_out")?;
    if gb != batch || go != d_out {
        return Err(Error::shape("linear grad_out", [batch, d_out], [gb, go]));
    }
    // dX = dY · W
    let mut grad_input = Tensor::matrix(batch, d_in, vec![T::zero(); batch * d_in])?;
    gemm_nn(batch, d_out, d_in, grad_out.data(), weight.data(), grad_input.data_mut());
    // dW = dYᵀ · X
    let mut grad_weight = Tensor::matrix(d_out, d_in, vec![T::zero(); d_out * d_in])?;
    gemm_tn(d_out, batch, d_in, grad_out.data(), input.data(), grad_weight.data_mut());
    let bias = want_bias.then(|| {
        let mut b = vec![T::zero(); d_out];
        for r in 0..batch {
            for (acc, &g) in b.iter_mut().zip(&grad_out.data()[r * d_out..(r + 1) * d_out]) {
                *acc += g;
            }
        }
        b
    });
    Ok(LinearGrads {
        input: grad_input,
        weight: grad_weight,
        bias,
    })
}
