//! Score-map targets, the squared-error loss, and argmax decoding.

use alloc::vec::Vec;

use super::KeypointSet;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// K score maps per sample, shape (N, K, H, W). Ground truth and
/// predictions share this type; ground-truth maps peak at exactly 1 on
/// the grid point nearest each annotated joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapStack<T> {
    pub maps: Tensor<T>,
}

impl<T: Real> ScoreMapStack<T> {
    pub fn new(maps: Tensor<T>) -> Self {
        ScoreMapStack { maps }
    }

    pub fn shape(&self) -> Shape {
        self.maps.shape()
    }
}

/// Ground-truth maps: a Gaussian bump `exp(-d^2 / (2 sigma^2))` around
/// the grid point nearest each visible joint (so the peak is exactly 1
/// there); invisible joints get an all-zero map.
pub fn make_target<T: Real>(
    joints: &KeypointSet,
    height: usize,
    width: usize,
    sigma: f64,
) -> ScoreMapStack<T> {
    debug_assert!(sigma > 0.0);
    let k = joints.len();
    let mut maps = Tensor::zeros(Shape::new(1, k, height, width));
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (ki, (joint, &vis)) in joints.joints.iter().zip(&joints.visible).enumerate() {
        if !vis {
            continue;
        }
        let zx = num_traits::Float::round(joint[0]);
        let zy = num_traits::Float::round(joint[1]);
        let plane = maps.plane_mut(0, ki);
        for y in 0..height {
            let dy = y as f64 - zy;
            for x in 0..width {
                let dx = x as f64 - zx;
                plane[y * width + x] = T::from_f64(num_traits::Float::exp(-(dx * dx + dy * dy) * inv));
            }
        }
    }
    ScoreMapStack::new(maps)
}

/// Batched targets stacked along N.
pub fn make_targets_batch<T: Real>(
    all: &[&KeypointSet],
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<ScoreMapStack<T>> {
    let first = all.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let k = first.len();
    let mut maps = Tensor::zeros(Shape::new(all.len(), k, height, width));
    for (n, kp) in all.iter().enumerate() {
        let single = make_target::<T>(kp, height, width, sigma);
        for c in 0..k {
            maps.plane_mut(n, c).copy_from_slice(single.maps.plane(0, c));
        }
    }
    Ok(ScoreMapStack::new(maps))
}

/// `L = 1/2 sum ||S - S_hat||^2` over every element (samples, joints,
/// pixels) of one stack's maps.
pub fn mse_loss<T: Real>(pred: &ScoreMapStack<T>, target: &ScoreMapStack<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse_loss",
            target.shape().dims(),
            pred.shape().dims(),
        ));
    }
    let half = T::from_f64(0.5);
    Ok(half
        * pred
            .maps
            .data()
            .iter()
            .zip(target.maps.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>())
}

/// Loss plus its gradient w.r.t. the prediction, which is simply
/// `(S_hat - S)`.
pub fn mse_loss_grad<T: Real>(
    pred: &ScoreMapStack<T>,
    target: &ScoreMapStack<T>,
) -> Result<(T, Tensor<T>)> {
    let loss = mse_loss(pred, target)?;
    let grad = pred.maps.zip_map(&target.maps, |p, t| p - t)?;
    Ok((loss, grad))
}

/// Argmax decoding of one sample's maps; ties break toward the smallest
/// row-major index. Every joint decodes as visible.
pub fn decode_keypoints<T: Real>(pred: &ScoreMapStack<T>, sample: usize) -> KeypointSet {
    let s = pred.shape();
    let mut joints = Vec::with_capacity(s.c);
    for k in 0..s.c {
        let plane = pred.maps.plane(sample, k);
        let mut best = plane[0];
        let mut best_at = 0usize;
        for (i, &v) in plane.iter().enumerate() {
            if v > best {
                best = v;
                best_at = i;
            }
        }
        joints.push([(best_at % s.w) as f64, (best_at / s.w) as f64]);
    }
    KeypointSet::all_visible(joints)
}
