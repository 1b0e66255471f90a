use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServiceError;
use crate::data::{preprocess, render_wound, RgbImage};
use crate::model::Checkpoint;
use crate::tensor::NdArray;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub task: String,
    pub probability: f64,
    pub threshold: f64,
    /// `probability >= threshold`.
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub model_version: String,
    /// Hex SHA-256 of the uploaded bytes.
    pub image_digest: String,
    pub predictions: Vec<TaskPrediction>,
    pub elapsed_ms: f64,
}

/// Immutable eval-mode model shared by the CLI and the HTTP service. Uses
/// the same preprocessing as evaluation and never augments.
#[derive(Clone, Debug)]
pub struct Predictor {
    checkpoint: Checkpoint,
}

impl Predictor {
    pub fn new(checkpoint: Checkpoint) -> Self {
        Predictor { checkpoint }
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn task_names(&self) -> &[String] {
        self.checkpoint.task_names()
    }

    /// Positive probabilities for one decoded image.
    pub fn probabilities(&self, image: &RgbImage) -> Result<Vec<f64>, ServiceError> {
        let size = self.checkpoint.model.config().input_size;
        let x = preprocess(image, size).map_err(|e| ServiceError::Decode(e.to_string()))?;
        let batch = NdArray::stack(&[x]).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut rows = self
            .checkpoint
            .model
            .predict_proba(&batch)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(rows.remove(0))
    }

    /// Decodes `bytes` (PNG or PPM) and thresholds each task, using
    /// `overrides[t]` in place of the stored threshold where given.
    pub fn predict_bytes(&self, bytes: &[u8], overrides: &[Option<f64>]) -> Result<PredictionResponse, ServiceError> {
        let start = Instant::now();
        let image = RgbImage::decode(bytes).map_err(|e| ServiceError::Decode(e.to_string()))?;
        let probs = self.probabilities(&image)?;
        let predictions = self
            .task_names()
            .iter()
            .zip(probs)
            .enumerate()
            .map(|(t, (name, probability))| {
                let threshold = overrides
                    .get(t)
                    .copied()
                    .flatten()
                    .unwrap_or(self.checkpoint.thresholds[t]);
                TaskPrediction {
                    task: name.clone(),
                    probability,
                    threshold,
                    label: probability >= threshold,
                }
            })
            .collect();
        Ok(PredictionResponse {
            model_version: self.checkpoint.model_version.clone(),
            image_digest: hex::encode(Sha256::digest(bytes)),
            predictions,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs a synthetic image through the model twice and checks that the
    /// outputs are valid probabilities and identical.
    pub fn self_test(&self) -> Result<(), ServiceError> {
        let size = self.checkpoint.model.config().input_size.max(16);
        let image = render_wound(&[1; 5], size, size, 1.0, 0);
        let a = self.probabilities(&image)?;
        let b = self.probabilities(&image)?;
        if a.len() != self.task_names().len() {
            return Err(ServiceError::Internal(format!(
                "self-test produced {} outputs for {} tasks",
                a.len(),
                self.task_names().len()
            )));
        }
        if a.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ServiceError::Internal(format!(
                "self-test produced invalid probabilities {a:?}"
            )));
        }
        if a != b {
            return Err(ServiceError::Internal(
                "self-test forward pass is not deterministic".into(),
            ));
        }
        Ok(())
    }
}
