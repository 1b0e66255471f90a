//! Mini-batch training with per-epoch validation and best-epoch selection.

use serde::{Deserialize, Serialize};

use super::loss::{compute_class_weights, weighted_bce_loss, ClassWeights};
use super::network::{Mode, WoundModel};
use super::ModelError;
use crate::autodiff::{sigmoid, Optimizer, OptimizerConfig, Tape};
use crate::data::{AugmentConfig, BatchLoader, ImageCache};
use crate::stats::auc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Balanced class weights from the training labels; uniform otherwise.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            optimizer: OptimizerConfig::default(),
            augment: Some(AugmentConfig::default()),
            class_weighting: true,
            seed: 0,
        }
    }
}

/// One line of the training log. Holds no timings, so two runs with the
/// same seed produce identical logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub first_batch_loss: f64,
    pub last_batch_loss: f64,
    /// Per-task validation AUC; `None` when a task has one class in validation.
    pub val_auc: Vec<Option<f64>>,
    pub mean_val_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub model: WoundModel,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub class_weights: ClassWeights,
}

/// Per-task AUC of eval-mode predictions on `images`.
pub fn validation_auc(
    model: &WoundModel,
    images: &ImageCache,
    batch_size: usize,
) -> Result<Vec<Option<f64>>, ModelError> {
    let tasks = model.config().num_tasks;
    let mut scores = vec![Vec::with_capacity(images.len()); tasks];
    let mut labels = vec![Vec::with_capacity(images.len()); tasks];
    for batch in images.eval_batches(batch_size) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch.images, Mode::Eval)?;
        for (row, y) in tape
            .value(out.logits)
            .data()
            .chunks_exact(tasks)
            .zip(batch.labels.data().chunks_exact(tasks))
        {
            for t in 0..tasks {
                scores[t].push(sigmoid(row[t]));
                labels[t].push(y[t] as u8);
            }
        }
    }
    Ok(scores.iter().zip(&labels).map(|(s, l)| auc(s, l).ok()).collect())
}

fn mean_auc(aucs: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = aucs.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Trains `model` in place and returns the parameters of the epoch with
/// the best mean validation AUC (the last epoch when there is no
/// validation set).
pub fn train(
    mut model: WoundModel,
    train_images: &ImageCache,
    val_images: Option<&ImageCache>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    if train_images.is_empty() {
        return Err(ModelError::Config("training set is empty".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(ModelError::Config("epochs and batch_size must be positive".into()));
    }
    let class_weights = if config.class_weighting {
        compute_class_weights(&train_images.manifest)?
    } else {
        ClassWeights::uniform(model.config().num_tasks)
    };
    let augment = config.augment.clone().unwrap_or_else(AugmentConfig::identity);
    let loader = BatchLoader::new(train_images, augment, config.batch_size, config.seed);
    let mut optimizer = Optimizer::new(config.optimizer.clone(), model.params());

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, WoundModel)> = None;
    for epoch in 1..=config.epochs {
        let lr_scale = config.optimizer.lr_decay.powi(epoch as i32 - 1);
        let mut losses = Vec::with_capacity(loader.batches_per_epoch());
        for (b, batch) in loader.epoch(epoch).enumerate() {
            let diverged = |reason: String| ModelError::Diverged {
                epoch,
                batch: b + 1,
                reason,
            };
            let mut tape = Tape::new();
            let out = model
                .forward(&mut tape, &batch.images, Mode::Train)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => diverged(t.to_string()),
                    other => other,
                })?;
            let loss = weighted_bce_loss(&mut tape, out.logits, &batch.labels, &class_weights)?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(diverged(format!("loss is {value}")));
            }
            let grads = tape.backward(loss).map_err(|e| diverged(e.to_string()))?;
            model.params_mut().load_grads(&tape, &grads);
            optimizer
                .step(model.params_mut(), lr_scale)
                .map_err(|e| diverged(e.to_string()))?;
            model.update_running_stats(&out);
            losses.push(value);
        }
        let val_auc = match val_images {
            Some(v) if !v.is_empty() => validation_auc(&model, v, 64)?,
            _ => Vec::new(),
        };
        let mean_val_auc = mean_auc(&val_auc);
        let entry = EpochLog {
            epoch,
            lr: config.optimizer.lr * lr_scale,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            first_batch_loss: losses[0],
            last_batch_loss: losses[losses.len() - 1],
            val_auc,
            mean_val_auc,
        };
        tracing::info!(
            epoch,
            train_loss = entry.train_loss,
            mean_val_auc = entry.mean_val_auc.unwrap_or(f64::NAN),
            "epoch finished"
        );
        log.push(entry);
        // ties and a missing validation score both go to the later epoch
        let score = mean_val_auc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
        class_weights,
    })
}
