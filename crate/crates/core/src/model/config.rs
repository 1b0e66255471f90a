use serde::{Deserialize, Serialize};

use super::ModelError;

/// Task order used everywhere: manifests, logits columns, reports.
pub const TASK_NAMES: [&str; 5] = ["deep", "infected", "arterial", "venous", "pressure"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Side length of the square network input, in pixels.
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub num_tasks: usize,
    pub task_names: Vec<String>,
    /// Bottleneck divisor of the attention mask convolutions.
    pub attention_reduction: usize,
    pub classifier_hidden: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            stage_channels: vec![16, 32, 64, 128],
            num_tasks: TASK_NAMES.len(),
            task_names: TASK_NAMES.iter().map(|s| s.to_string()).collect(),
            attention_reduction: 2,
            classifier_hidden: 64,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.num_tasks != self.task_names.len() {
            return bad(format!(
                "num_tasks is {} but {} task names were given",
                self.num_tasks,
                self.task_names.len()
            ));
        }
        if self.num_tasks == 0 {
            return bad("at least one task is required".into());
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return bad(format!(
                "stage_channels must be nonempty and positive, got {:?}",
                self.stage_channels
            ));
        }
        if self.input_size == 0 || self.attention_reduction == 0 || self.classifier_hidden == 0 {
            return bad("input_size, attention_reduction and classifier_hidden must be positive".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be positive and bn_momentum in [0, 1]".into());
        }
        Ok(())
    }

    /// Width of the fused multi-level feature vector of one task.
    pub fn fused_width(&self) -> usize {
        self.stage_channels.iter().sum()
    }

    pub(crate) fn attention_hidden(&self, channels: usize) -> usize {
        (channels / self.attention_reduction).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_fuses_240() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.fused_width(), 240);
    }

    #[test]
    fn task_count_must_match_names() {
        let c = ModelConfig {
            num_tasks: 4,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
    }
}
