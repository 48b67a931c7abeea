//! Stacked-hourglass pose assembly: model builder, score-map targets,
//! loss, decoding, the PCK metric, RMSProp, and the toy training loop.

mod augment;
mod hourglass;
mod metric;
mod optim;
mod target;
mod train;

pub use augment::{augment_sample, AugmentConfig};
pub use hourglass::{build_pose_model, BlockSpec, HourglassConfig, PoseModel};
pub use metric::{pck, PckReport};
pub use optim::{rmsprop_step, RmsPropState};
pub use target::{decode_keypoints, make_target, mse_loss, mse_loss_grad, ScoreMapStack};
pub use train::{train, Dataset, EpochLog, Sample, TrainConfig, TrainReport};

use alloc::vec::Vec;

/// K joint locations in heatmap pixel units plus visibility flags.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KeypointSet {
    pub joints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl KeypointSet {
    pub fn all_visible(joints: Vec<[f64; 2]>) -> Self {
        let visible = alloc::vec![true; joints.len()];
        KeypointSet { joints, visible }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Diagonal of the bounding box of the visible joints; the body-scale
    /// normalizer the toy PCK uses.
    pub fn bbox_diagonal(&self) -> f64 {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for (j, &vis) in self.joints.iter().zip(&self.visible) {
            if !vis {
                continue;
            }
            any = true;
            for a in 0..2 {
                min[a] = min[a].min(j[a]);
                max[a] = max[a].max(j[a]);
            }
        }
        if !any {
            return 0.0;
        }
        let dx = max[0] - min[0];
        let dy = max[1] - min[1];
        num_traits::Float::sqrt(dx * dx + dy * dy)
    }
}
