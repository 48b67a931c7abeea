//! RMSProp.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-parameter squared-gradient accumulators, initialized to zero.
#[derive(Debug, Clone)]
pub struct RmsPropState<T> {
    pub acc: Vec<Tensor<T>>,
}

impl<T: Real> RmsPropState<T> {
    pub fn for_params(params: &[Tensor<T>]) -> Self {
        RmsPropState {
            acc: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One update: `acc <- decay*acc + (1-decay)*g^2`,
/// `p <- p - lr * g / (sqrt(acc) + eps)`. Rejects non-finite gradients
/// before touching any state.
pub fn rmsprop_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut RmsPropState<T>,
    lr: T,
    decay: T,
    eps: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.acc.len() {
        return Err(Error::invalid("rmsprop: params/grads/state lengths differ"));
    }
    for g in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                context: "rmsprop gradient".into(),
            });
        }
    }
    let one_minus = T::one() - decay;
    for ((p, g), acc) in params.iter_mut().zip(grads).zip(state.acc.iter_mut()) {
        for ((pv, &gv), av) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(acc.data_mut().iter_mut())
        {
            *av = decay * *av + one_minus * gv * gv;
            *pv -= lr * gv / (av.sqrt() + eps);
        }
    }
    Ok(())
}
