//! Toy-scale training loop: RMSProp over summed per-stack squared-error
//! losses, seeded augmentation, piecewise-constant learning-rate
//! schedule, per-epoch validation PCK. Single-threaded and fully
//! deterministic given the seed.

use alloc::vec::Vec;

use super::augment::{augment_sample, AugmentConfig};
use super::hourglass::PoseModel;
use super::metric::{pck, PckReport};
use super::optim::{rmsprop_step, RmsPropState};
use super::target::{decode_keypoints, make_targets_batch, mse_loss_grad, ScoreMapStack};
use super::KeypointSet;
use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::real::Real;
use crate::rng::{derive_seed, rng_from_seed, uniform};
use crate::tensor::{Shape, Tensor};

/// One training example: image plus joints in image pixels.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub joints: KeypointSet,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
    /// Joint index pairs swapped under horizontal flip.
    pub flip_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// 1-based epochs at which the rate multiplies by `lr_drop_factor`.
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Target Gaussian std in heatmap pixels.
    pub sigma: f64,
    pub pck_threshold: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 8,
            lr: 7e-4,
            lr_drop_epochs: alloc::vec![20, 27],
            lr_drop_factor: 0.1,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            sigma: 1.0,
            pck_threshold: 0.2,
            augment: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-batch loss of each stack over the epoch.
    pub stack_losses: Vec<f64>,
    pub val_pck: PckReport,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
}

impl TrainReport {
    pub fn final_mean_pck(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.val_pck.mean)
    }
}

fn batch_images<T: Real>(samples: &[(Tensor<T>, KeypointSet)]) -> Result<Tensor<T>> {
    let first = samples[0].0.shape();
    let mut out = Tensor::zeros(Shape::new(samples.len(), first.c, first.h, first.w));
    for (n, (img, _)) in samples.iter().enumerate() {
        if img.shape() != first {
            return Err(Error::shape("batch image", first.dims(), img.shape().dims()));
        }
        for c in 0..first.c {
            out.plane_mut(n, c).copy_from_slice(img.plane(0, c));
        }
    }
    Ok(out)
}

fn to_heatmap_units(kp: &KeypointSet, stride: f64) -> KeypointSet {
    KeypointSet {
        joints: kp.joints.iter().map(|j| [j[0] / stride, j[1] / stride]).collect(),
        visible: kp.visible.clone(),
    }
}

/// Validation: eval-mode forward over the whole set, decode the last
/// stack, PCK against ground truth with per-sample bounding-box-diagonal
/// normalizers.
pub fn evaluate<T: Real>(
    model: &PoseModel<T>,
    data: &Dataset<T>,
    batch: usize,
    threshold: f64,
    mode: Mode,
) -> Result<PckReport> {
    let stride = model.config.input_size.0 as f64 / model.config.heatmap_size().0 as f64;
    let mut preds = Vec::with_capacity(data.samples.len());
    let mut gts = Vec::with_capacity(data.samples.len());
    let mut norms = Vec::with_capacity(data.samples.len());
    for chunk in data.samples.chunks(batch.max(1)) {
        let items: Vec<(Tensor<T>, KeypointSet)> = chunk
            .iter()
            .map(|s| (s.image.clone(), s.joints.clone()))
            .collect();
        let images = batch_images(&items)?;
        let pass = model.graph.forward(&[images], mode)?;
        let outputs = model.graph.outputs_of(&pass);
        let last = ScoreMapStack::new((*outputs.last().unwrap()).clone());
        for (i, s) in chunk.iter().enumerate() {
            let gt = to_heatmap_units(&s.joints, stride);
            let norm = gt.bbox_diagonal();
            preds.push(decode_keypoints(&last, i));
            gts.push(gt);
            norms.push(norm);
        }
    }
    pck(&preds, &gts, threshold, &norms)
}

/// Run the full loop; `on_epoch` fires after each epoch with the log
/// entry (the CLI streams these to its metrics file).
pub fn train<T: Real>(
    model: &mut PoseModel<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    if train_set.samples.is_empty() || val_set.samples.is_empty() {
        return Err(Error::invalid("train: datasets must be nonempty"));
    }
    let stacks = model.graph.output_ids().len();
    let (hm_h, hm_w) = model.config.heatmap_size();
    let stride = model.config.input_size.0 as f64 / hm_h as f64;
    let aug_cfg = AugmentConfig::toy(train_set.flip_pairs.clone());
    let mut state = RmsPropState::for_params(model.graph.param_values());
    let mut report = TrainReport { epochs: Vec::new() };

    for epoch in 1..=cfg.epochs {
        let drops = cfg.lr_drop_epochs.iter().filter(|&&d| epoch >= d).count();
        let lr = cfg.lr * num_traits::Float::powi(cfg.lr_drop_factor, drops as i32);

        // Seeded shuffle, fresh stream per epoch.
        let mut order: Vec<usize> = (0..train_set.samples.len()).collect();
        let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, &alloc::format!("shuffle/{epoch}")));
        for i in (1..order.len()).rev() {
            let j = (uniform::<f64>(&mut shuffle_rng, 0.0, (i + 1) as f64)) as usize;
            order.swap(i, j.min(i));
        }

        let mut loss_sums = alloc::vec![0.0f64; stacks];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let items: Vec<(Tensor<T>, KeypointSet)> = chunk
                .iter()
                .map(|&idx| {
                    let s = &train_set.samples[idx];
                    if cfg.augment {
                        let mut rng = rng_from_seed(derive_seed(
                            cfg.seed,
                            &alloc::format!("aug/{epoch}/{idx}"),
                        ));
                        augment_sample(&s.image, &s.joints, &aug_cfg, &mut rng)
                    } else {
                        (s.image.clone(), s.joints.clone())
                    }
                })
                .collect();
            let images = batch_images(&items)?;
            let kps: Vec<KeypointSet> = items
                .iter()
                .map(|(_, kp)| to_heatmap_units(kp, stride))
                .collect();
            let kp_refs: Vec<&KeypointSet> = kps.iter().collect();
            let target = make_targets_batch::<T>(&kp_refs, hm_h, hm_w, cfg.sigma)?;

            let pass = model.graph.forward_train(&[images])?;
            let mut out_grads = Vec::with_capacity(stacks);
            {
                let outputs = model.graph.outputs_of(&pass);
                for (s_i, out) in outputs.iter().enumerate() {
                    let pred = ScoreMapStack::new((*out).clone());
                    let (loss, grad) = mse_loss_grad(&pred, &target)?;
                    let loss = loss.to_f64();
                    if !loss.is_finite() {
                        return Err(Error::NonFinite {
                            context: alloc::format!("training loss at epoch {epoch}, stack {s_i}"),
                        });
                    }
                    loss_sums[s_i] += loss;
                    out_grads.push(grad);
                }
            }
            let grads = model.graph.backward(&pass, &out_grads)?;
            rmsprop_step(
                model.graph.param_values_mut(),
                &grads.params,
                &mut state,
                T::from_f64(lr),
                T::from_f64(cfg.rmsprop_decay),
                T::from_f64(cfg.rmsprop_eps),
            )?;
            batches += 1;
        }

        let val_pck = evaluate(model, val_set, cfg.batch, cfg.pck_threshold, Mode::Eval)?;
        let log = EpochLog {
            epoch,
            stack_losses: loss_sums.iter().map(|&s| s / batches as f64).collect(),
            val_pck,
        };
        on_epoch(&log);
        report.epochs.push(log);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{apply_init, Compromise, InitScheme};
    use crate::pose::hourglass::{build_pose_model, HourglassConfig};
    use crate::synth::{generate, FigureSpec};

    #[test]
    fn one_epoch_smoke_logs_losses_per_stack() {
        let spec = FigureSpec::default();
        let mut cfg = HourglassConfig::toy();
        cfg.channels = 8;
        cfg.stacks = 2;
        let mut model = build_pose_model::<f32>(&cfg).unwrap();
        apply_init(
            &mut model.graph,
            &InitScheme::branch_aware(0.5, Compromise::PaperEq15),
            3,
        )
        .unwrap();
        let train_samples = generate::<f32>(8, &spec, 11);
        let val_samples = generate::<f32>(4, &spec, 12);
        let ds = |samples| Dataset {
            samples,
            flip_pairs: spec.flip_pairs(),
        };
        let tcfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let report = train(&mut model, &ds(train_samples), &ds(val_samples), &tcfg, |log| {
            assert_eq!(log.stack_losses.len(), 2);
            assert!(log.stack_losses.iter().all(|l| l.is_finite() && *l > 0.0));
            seen += 1;
        })
        .unwrap();
        assert_eq!(seen, 1);
        assert_eq!(report.epochs.len(), 1);
    }
}
