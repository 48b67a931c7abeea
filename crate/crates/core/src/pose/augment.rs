//! Training-time augmentation: horizontal flip with left/right joint
//! remapping, rotation and scale jitter about the image center, and
//! additive pixel noise. Joints are carried in image pixels; a joint
//! pushed outside the frame becomes invisible.

use alloc::vec::Vec;

use super::KeypointSet;
use crate::real::Real;
use crate::rng::{standard_normal, uniform, EngineRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub hflip: bool,
    /// Joint index pairs swapped by a horizontal flip.
    pub flip_pairs: Vec<(usize, usize)>,
    /// Uniform scale jitter range.
    pub scale: (f64, f64),
    /// Max absolute rotation in degrees.
    pub rotate_deg: f64,
    /// Std of the additive Gaussian pixel noise.
    pub noise_std: f64,
}

impl AugmentConfig {
    pub fn toy(flip_pairs: Vec<(usize, usize)>) -> Self {
        AugmentConfig {
            hflip: true,
            flip_pairs,
            scale: (0.75, 1.25),
            rotate_deg: 30.0,
            noise_std: 0.03,
        }
    }
}

fn sample_border_zero<T: Real>(plane: &[T], h: usize, w: usize, y: f64, x: f64) -> T {
    if !(x > -1.0 && x < w as f64 && y > -1.0 && y < h as f64) {
        return T::zero();
    }
    let x0 = num_traits::Float::floor(x);
    let y0 = num_traits::Float::floor(y);
    let fx = T::from_f64(x - x0);
    let fy = T::from_f64(y - y0);
    let at = |yy: f64, xx: f64| -> T {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            T::zero()
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let one = T::one();
    at(y0, x0) * (one - fy) * (one - fx)
        + at(y0, x0 + 1.0) * (one - fy) * fx
        + at(y0 + 1.0, x0) * fy * (one - fx)
        + at(y0 + 1.0, x0 + 1.0) * fy * fx
}

/// Apply one random augmentation draw to a sample.
pub fn augment_sample<T: Real>(
    image: &Tensor<T>,
    joints: &KeypointSet,
    cfg: &AugmentConfig,
    rng: &mut EngineRng,
) -> (Tensor<T>, KeypointSet) {
    let s = image.shape();
    let (h, w) = (s.h, s.w);
    let mut img = image.clone();
    let mut kp = joints.clone();

    if cfg.hflip && uniform::<f64>(rng, 0.0, 1.0) < 0.5 {
        let mut flipped = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let src = img.plane(n, c);
                let dst = flipped.plane_mut(n, c);
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] = src[y * w + (w - 1 - x)];
                    }
                }
            }
        }
        img = flipped;
        for j in kp.joints.iter_mut() {
            j[0] = (w - 1) as f64 - j[0];
        }
        for &(a, b) in &cfg.flip_pairs {
            kp.joints.swap(a, b);
            kp.visible.swap(a, b);
        }
    }

    let scale = uniform::<f64>(rng, cfg.scale.0, cfg.scale.1);
    let theta = uniform::<f64>(rng, -cfg.rotate_deg, cfg.rotate_deg) * core::f64::consts::PI / 180.0;
    if scale != 1.0 || theta != 0.0 {
        let (sin, cos) = num_traits::Float::sin_cos(theta);
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let mut warped = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let src = img.plane(n, c);
                let dst = warped.plane_mut(n, c);
                for y in 0..h {
                    for x in 0..w {
                        // Inverse map: un-scale and un-rotate around the center.
                        let dx = x as f64 - cx;
                        let dy = y as f64 - cy;
                        let sx = (cos * dx + sin * dy) / scale + cx;
                        let sy = (-sin * dx + cos * dy) / scale + cy;
                        dst[y * w + x] = sample_border_zero(src, h, w, sy, sx);
                    }
                }
            }
        }
        img = warped;
        for (j, vis) in kp.joints.iter_mut().zip(kp.visible.iter_mut()) {
            let dx = j[0] - cx;
            let dy = j[1] - cy;
            let nx = (cos * dx - sin * dy) * scale + cx;
            let ny = (sin * dx + cos * dy) * scale + cy;
            j[0] = nx;
            j[1] = ny;
            if nx < 0.0 || ny < 0.0 || nx > (w - 1) as f64 || ny > (h - 1) as f64 {
                *vis = false;
            }
        }
    }

    if cfg.noise_std > 0.0 {
        let std = T::from_f64(cfg.noise_std);
        for v in img.data_mut() {
            *v += standard_normal::<T>(rng) * std;
        }
    }

    (img, kp)
}
