use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{bce_term, Tape, Var};
use crate::data::DatasetManifest;
use crate::tensor::NdArray;

/// Per-task `(negative, positive)` class weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub per_task: Vec<TaskWeights>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub negative: f64,
    pub positive: f64,
}

impl ClassWeights {
    pub fn uniform(num_tasks: usize) -> Self {
        ClassWeights {
            per_task: vec![
                TaskWeights {
                    negative: 1.0,
                    positive: 1.0
                };
                num_tasks
            ],
        }
    }

    /// Balanced inverse frequency: `w_c = N / (2 N_c)` per task and class.
    pub fn from_counts(positives: &[usize], total: usize, task_names: &[String]) -> Result<Self, ModelError> {
        let per_task = positives
            .iter()
            .enumerate()
            .map(|(t, &pos)| {
                let neg = total.saturating_sub(pos);
                if pos == 0 || neg == 0 {
                    let name = task_names.get(t).map_or("?", String::as_str);
                    return Err(ModelError::EmptyClass {
                        task: name.to_string(),
                        class: if pos == 0 { "positive" } else { "negative" },
                    });
                }
                Ok(TaskWeights {
                    negative: total as f64 / (2.0 * neg as f64),
                    positive: total as f64 / (2.0 * pos as f64),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(ClassWeights { per_task })
    }

    pub fn scaled(&self, k: f64) -> Self {
        ClassWeights {
            per_task: self
                .per_task
                .iter()
                .map(|w| TaskWeights {
                    negative: w.negative * k,
                    positive: w.positive * k,
                })
                .collect(),
        }
    }
}

/// Class weights from the label tallies of a training manifest.
pub fn compute_class_weights(train: &DatasetManifest) -> Result<ClassWeights, ModelError> {
    ClassWeights::from_counts(&train.positive_counts(), train.len(), &train.task_names())
}

fn check_labels(labels: &NdArray, expected: &[usize]) -> Result<(), ModelError> {
    if labels.shape() != expected {
        return Err(ModelError::Labels(format!(
            "label shape {:?}, logits {:?}",
            labels.shape(),
            expected
        )));
    }
    if let Some(bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(ModelError::Labels(format!("label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Weighted binary cross-entropy from logits, averaged over images and tasks.
pub fn weighted_bce_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &NdArray,
    weights: &ClassWeights,
) -> Result<Var, ModelError> {
    let shape = tape.value(logits).shape().to_vec();
    check_labels(labels, &shape)?;
    let tasks = shape[1];
    if weights.per_task.len() != tasks {
        return Err(ModelError::Labels(format!(
            "{} class weights for {tasks} tasks",
            weights.per_task.len()
        )));
    }
    let w: Vec<f64> = labels
        .data()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let tw = weights.per_task[i % tasks];
            if y == 1.0 {
                tw.positive
            } else {
                tw.negative
            }
        })
        .collect();
    Ok(tape.weighted_bce_with_logits(logits, labels.data(), &w)?)
}

/// Plain (unweighted) mean binary cross-entropy of logits against labels.
pub fn bce_loss_value(logits: &[f64], labels: &[f64]) -> f64 {
    logits.iter().zip(labels).map(|(&z, &y)| bce_term(z, y)).sum::<f64>() / logits.len() as f64
}
