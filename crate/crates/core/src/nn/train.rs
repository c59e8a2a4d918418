//! Adam training loop with seeded flip augmentation.

use crate::eval::{compute_metrics, derive_seed};
use crate::nn::focal::{
    focal_logit_grad, focal_loss, inverse_frequency_alpha, FocalLossParams,
};
use crate::nn::model::{argmax_class, ClassifierError, ClassifierModel, PredictionRecord};
use crate::tiler::LabeledTile;
use crate::types::{PatternClass, PATTERN_COUNT};
use ndarray::{Array1, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Focal,
    CrossEntropy,
    WeightedCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of a horizontal flip, drawn per tile per epoch.
    pub flip_horizontal: f64,
    /// Probability of a vertical flip, drawn per tile per epoch.
    pub flip_vertical: f64,
    pub loss: LossKind,
    /// Focal exponent; ignored by the cross-entropy losses.
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 12,
            seed: 0,
            flip_horizontal: 0.5,
            flip_vertical: 0.5,
            loss: LossKind::Focal,
            gamma: 0.7,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub(crate) fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Flips a front tensor along the requested axes.
///
/// The 5x5 all-ones dilation and the 2x2 pooling both commute with axis
/// reversal on even sides, so flipping the half-resolution front equals
/// flipping the binary input planes first.
pub fn flip_front(front: &Array3<f64>, horizontal: bool, vertical: bool) -> Array3<f64> {
    let mut view = front.view();
    if vertical {
        view.invert_axis(Axis(1));
    }
    if horizontal {
        view.invert_axis(Axis(2));
    }
    // copy into standard layout; the conv kernels slice rows contiguously
    let mut out = Array3::zeros(front.dim());
    out.assign(&view);
    out
}

const SHUFFLE_STREAM: u64 = 1;
const FLIP_STREAM: u64 = 2;

fn loss_params(config: &TrainConfig, train_tiles: &[LabeledTile]) -> FocalLossParams {
    match config.loss {
        LossKind::Focal => {
            FocalLossParams::new(config.gamma, vec![1.0; PATTERN_COUNT]).expect("validated gamma")
        }
        LossKind::CrossEntropy => FocalLossParams::cross_entropy(PATTERN_COUNT),
        LossKind::WeightedCrossEntropy => {
            let mut counts = [0u64; PATTERN_COUNT];
            for tile in train_tiles {
                counts[tile.label.index()] += 1;
            }
            FocalLossParams::new(0.0, inverse_frequency_alpha(&counts)).expect("gamma 0")
        }
    }
}

fn validate_config(config: &TrainConfig) {
    assert!(
        config.learning_rate.is_finite() && config.learning_rate >= 0.0,
        "learning rate must be finite and nonnegative"
    );
    assert!(config.batch_size > 0, "batch size must be positive");
    assert!(config.epochs > 0, "need at least one epoch");
    assert!(
        (0.0..=1.0).contains(&config.flip_horizontal)
            && (0.0..=1.0).contains(&config.flip_vertical),
        "flip probabilities must be in [0, 1]"
    );
    assert!(
        config.gamma.is_finite() && config.gamma >= 0.0,
        "gamma must be finite and nonnegative"
    );
}

fn mean_loss_and_f1(
    model: &ClassifierModel,
    fronts: &[Array3<f64>],
    tiles: &[LabeledTile],
    params: &FocalLossParams,
) -> (f64, f64) {
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(tiles.len());
    for (front, tile) in fronts.iter().zip(tiles) {
        let (probs, _) = model.forward_from_front(front);
        let probs_slice = probs.as_slice().expect("contiguous probabilities");
        loss_sum += focal_loss(probs_slice, tile.label.index(), params).value;
        predictions.push(PredictionRecord {
            slide_id: tile.slide_id.clone(),
            x: tile.x,
            y: tile.y,
            predicted: argmax_class(probs_slice),
            probabilities: probs_slice.to_vec(),
        });
    }
    let truths: Vec<PatternClass> = tiles.iter().map(|t| t.label).collect();
    let report = compute_metrics(&predictions, &truths).expect("non-empty validation set");
    (loss_sum / tiles.len() as f64, report.macro_f1)
}

/// Trains the model in place and returns the per-epoch log.
///
/// Shuffling and augmentation draw from ChaCha streams derived from
/// `config.seed`; the flip stream is partitioned by (epoch, tile index), so
/// runs with equal inputs are bit-reproducible. The model is left at the
/// weights of the epoch with the best validation macro F1 (earliest on ties).
pub fn train_classifier(
    model: &mut ClassifierModel,
    train_tiles: &[LabeledTile],
    val_tiles: &[LabeledTile],
    config: &TrainConfig,
) -> Result<TrainReport, ClassifierError> {
    validate_config(config);
    if train_tiles.is_empty() || val_tiles.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    let params = loss_params(config, train_tiles);
    let train_fronts: Vec<Array3<f64>> = train_tiles
        .iter()
        .map(|t| model.front_input(&t.pixels))
        .collect::<Result<_, _>>()?;
    let val_fronts: Vec<Array3<f64>> = val_tiles
        .iter()
        .map(|t| model.front_input(&t.pixels))
        .collect::<Result<_, _>>()?;

    let mut adam = Adam::new(model.param_count());
    let shuffle_base = derive_seed(config.seed, SHUFFLE_STREAM);
    let flip_base = derive_seed(config.seed, FLIP_STREAM);
    let mut stats: Vec<EpochStats> = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_tiles.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_base, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad_acc: Vec<f64> = vec![0.0; adam.m.len()];
            for &idx in batch {
                let tile = &train_tiles[idx];
                let stream = ((epoch as u64) << 32) | idx as u64;
                let mut flip_rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(flip_base, stream));
                let flip_h = flip_rng.random_bool(config.flip_horizontal);
                let flip_v = flip_rng.random_bool(config.flip_vertical);
                let (probs, cache) = if flip_h || flip_v {
                    let front = flip_front(&train_fronts[idx], flip_h, flip_v);
                    model.forward_from_front(&front)
                } else {
                    model.forward_from_front(&train_fronts[idx])
                };
                let probs_slice = probs.as_slice().expect("contiguous probabilities");
                loss_sum += focal_loss(probs_slice, tile.label.index(), &params).value;
                let dlogits = focal_logit_grad(probs_slice, tile.label.index(), &params);
                let grads = model.backward(&cache, &Array1::from(dlogits));
                for (acc, g) in grad_acc.iter_mut().zip(grads.flat()) {
                    *acc += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad_acc.iter_mut().for_each(|g| *g *= scale);
            let mut theta = model.params_flat();
            adam.step(&mut theta, &grad_acc, config.learning_rate);
            model.set_params_flat(&theta);
        }

        let train_loss = loss_sum / train_tiles.len() as f64;
        let (val_loss, val_macro_f1) = mean_loss_and_f1(model, &val_fronts, val_tiles, &params);
        stats.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_macro_f1,
        });
        if best.as_ref().is_none_or(|(_, f1, _)| val_macro_f1 > *f1) {
            best = Some((epoch + 1, val_macro_f1, model.params_flat()));
        }
    }

    let (best_epoch, best_val_macro_f1, best_params) = best.expect("epochs > 0");
    model.set_params_flat(&best_params);
    Ok(TrainReport {
        epochs: stats,
        best_epoch,
        best_val_macro_f1,
    })
}
