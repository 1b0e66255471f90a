use super::io::ProbabilityTable;
use super::report::{metrics_report, MetricsReport};
use super::StatsError;
use crate::data::{ImageCache, NUM_TASKS};
use crate::model::{Checkpoint, TASK_NAMES};

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub probabilities: ProbabilityTable,
}

/// Eval-mode probabilities for every cached image plus the per-task
/// metric table. `thresholds` defaults to the checkpoint's own.
pub fn evaluate_model(
    checkpoint: &Checkpoint,
    images: &ImageCache,
    thresholds: Option<&[f64]>,
    batch_size: usize,
) -> Result<Evaluation, StatsError> {
    let names = checkpoint.task_names();
    if names.len() != NUM_TASKS || names.iter().zip(TASK_NAMES).any(|(a, b)| a != b) {
        return Err(StatsError::Invalid(format!(
            "checkpoint tasks {names:?} do not match manifest tasks {TASK_NAMES:?}"
        )));
    }
    let size = checkpoint.model.config().input_size;
    if images.size() != size {
        return Err(StatsError::Invalid(format!(
            "images were preprocessed to {}, the model expects {size}",
            images.size()
        )));
    }
    let mut rows = Vec::with_capacity(images.len());
    for batch in images.eval_batches(batch_size) {
        let probs = checkpoint.model.predict_proba(&batch.images)?;
        for (&i, p) in batch.indices.iter().zip(probs) {
            let p: [f64; NUM_TASKS] = p.try_into().expect("five task columns");
            rows.push((images.manifest.samples[i].image_id.clone(), p));
        }
    }
    let probs: Vec<[f64; NUM_TASKS]> = rows.iter().map(|(_, p)| *p).collect();
    let labels: Vec<[u8; NUM_TASKS]> = images.manifest.samples.iter().map(|s| s.labels).collect();
    let report = metrics_report(&probs, &labels, thresholds.unwrap_or(&checkpoint.thresholds))?;
    Ok(Evaluation {
        report,
        probabilities: ProbabilityTable { rows },
    })
}
