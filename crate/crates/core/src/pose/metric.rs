//! Percentage of Correct Keypoints.

use alloc::vec;
use alloc::vec::Vec;

use super::KeypointSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PckReport {
    pub per_joint: Vec<f64>,
    pub mean: f64,
}

/// A joint counts as correct when its prediction lies within
/// `threshold * normalizer` of the ground truth (closed boundary).
/// Invisible ground-truth joints are skipped. `normalizers` is
/// per-sample (e.g. the bounding-box diagonal).
pub fn pck(
    pred: &[KeypointSet],
    gt: &[KeypointSet],
    threshold: f64,
    normalizers: &[f64],
) -> Result<PckReport> {
    if pred.len() != gt.len() || pred.len() != normalizers.len() {
        return Err(Error::invalid("pck: pred/gt/normalizer lengths differ"));
    }
    let first = gt.first().ok_or_else(|| Error::invalid("pck: empty set"))?;
    let k = first.len();
    let mut correct = vec![0usize; k];
    let mut seen = vec![0usize; k];
    for ((p, g), &norm) in pred.iter().zip(gt).zip(normalizers) {
        if norm <= 0.0 {
            return Err(Error::invalid("pck: normalizer must be positive"));
        }
        for j in 0..k {
            if !g.visible[j] {
                continue;
            }
            seen[j] += 1;
            let dx = p.joints[j][0] - g.joints[j][0];
            let dy = p.joints[j][1] - g.joints[j][1];
            let dist = num_traits::Float::sqrt(dx * dx + dy * dy);
            if dist <= threshold * norm {
                correct[j] += 1;
            }
        }
    }
    let per_joint: Vec<f64> = correct
        .iter()
        .zip(&seen)
        .map(|(&c, &s)| if s == 0 { 0.0 } else { c as f64 / s as f64 })
        .collect();
    let visible_joints: Vec<f64> = per_joint
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| s > 0)
        .map(|(&v, _)| v)
        .collect();
    let mean = if visible_joints.is_empty() {
        0.0
    } else {
        visible_joints.iter().sum::<f64>() / visible_joints.len() as f64
    };
    Ok(PckReport { per_joint, mean })
}
