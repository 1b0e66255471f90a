//! Per-task metric tables and model-versus-rater kappa comparisons, as
//! plain text and JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::io::{ProbabilityTable, RaterRecord};
use super::kappa::{kappa_difference_ci, KappaComparison, Verdict};
use super::metrics::{auc, basic_metrics, ConfusionCounts};
use super::StatsError;
use crate::data::{DatasetManifest, NUM_TASKS};
use crate::model::TASK_NAMES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub tasks: Vec<TaskMetrics>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"))
}

/// `predicted = probability >= threshold` per task.
pub fn threshold_answers(probs: &[[f64; NUM_TASKS]], thresholds: &[f64], task: usize) -> Vec<u8> {
    probs.iter().map(|p| u8::from(p[task] >= thresholds[task])).collect()
}

pub fn metrics_report(
    probs: &[[f64; NUM_TASKS]],
    labels: &[[u8; NUM_TASKS]],
    thresholds: &[f64],
) -> Result<MetricsReport, StatsError> {
    if probs.len() != labels.len() {
        return Err(StatsError::Length {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if thresholds.len() != NUM_TASKS {
        return Err(StatsError::Invalid(format!(
            "{} thresholds for {NUM_TASKS} tasks",
            thresholds.len()
        )));
    }
    let tasks = (0..NUM_TASKS)
        .map(|t| {
            let truth: Vec<u8> = labels.iter().map(|l| l[t]).collect();
            let scores: Vec<f64> = probs.iter().map(|p| p[t]).collect();
            let counts = ConfusionCounts::tally(&threshold_answers(probs, thresholds, t), &truth);
            let m = basic_metrics(&counts);
            let auc = match auc(&scores, &truth) {
                Ok(a) => Some(a),
                Err(StatsError::SingleClass) => None,
                Err(e) => return Err(e),
            };
            Ok(TaskMetrics {
                task: TASK_NAMES[t].to_string(),
                threshold: thresholds[t],
                counts,
                accuracy: m.accuracy,
                sensitivity: m.sensitivity,
                specificity: m.specificity,
                auc,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(MetricsReport {
        images: probs.len(),
        tasks,
    })
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:>9} {:>11} {:>11} {:>7}\n",
            "task", "accuracy", "sensitivity", "specificity", "AUC"
        );
        for t in &self.tasks {
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>11} {:>11} {:>7}",
                t.task,
                cell(t.accuracy),
                cell(t.sensitivity),
                cell(t.specificity),
                cell(t.auc)
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task: String,
    #[serde(flatten)]
    pub comparison: KappaComparison,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterComparison {
    pub rater_id: String,
    pub images: usize,
    pub tasks: Vec<TaskComparison>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_boot: usize,
    pub seed: u64,
    pub raters: Vec<RaterComparison>,
}

/// Compares thresholded model answers with each rater on the rater's own
/// images, against the manifest's labels.
pub fn compare_raters(
    probs: &ProbabilityTable,
    raters: &[RaterRecord],
    truth: &DatasetManifest,
    thresholds: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<ComparisonReport, StatsError> {
    let prob_index = probs.index();
    let truth_index: std::collections::HashMap<&str, &[u8; NUM_TASKS]> =
        truth.samples.iter().map(|s| (s.image_id.as_str(), &s.labels)).collect();
    let mut out = Vec::with_capacity(raters.len());
    for rater in raters {
        let mut model_p = Vec::with_capacity(rater.answers.len());
        let mut labels = Vec::with_capacity(rater.answers.len());
        for id in rater.answers.keys() {
            let missing =
                |what: &str| StatsError::Format(format!("rater `{}`: image `{id}` has no {what}", rater.rater_id));
            model_p.push(
                **prob_index
                    .get(id.as_str())
                    .ok_or_else(|| missing("model probability"))?,
            );
            labels.push(
                **truth_index
                    .get(id.as_str())
                    .ok_or_else(|| missing("ground-truth label"))?,
            );
        }
        let answers: Vec<[u8; NUM_TASKS]> = rater.answers.values().copied().collect();
        let tasks = (0..NUM_TASKS)
            .map(|t| {
                let model = threshold_answers(&model_p, thresholds, t);
                let rater_t: Vec<u8> = answers.iter().map(|a| a[t]).collect();
                let truth_t: Vec<u8> = labels.iter().map(|l| l[t]).collect();
                Ok(TaskComparison {
                    task: TASK_NAMES[t].to_string(),
                    comparison: kappa_difference_ci(&model, &rater_t, &truth_t, n_boot, seed)?,
                })
            })
            .collect::<Result<_, StatsError>>()?;
        out.push(RaterComparison {
            rater_id: rater.rater_id.clone(),
            images: answers.len(),
            tasks,
        });
    }
    Ok(ComparisonReport {
        n_boot,
        seed,
        raters: out,
    })
}

impl ComparisonReport {
    /// Difference with CI per rater and task; `*` marks a significant
    /// difference in either direction.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<14} {:<8}", "rater", "");
        for t in TASK_NAMES {
            let _ = write!(s, " {t:>17}");
        }
        s.push('\n');
        for r in &self.raters {
            let _ = write!(s, "{:<14} {:<8}", r.rater_id, "diff");
            for t in &r.tasks {
                let star = if t.comparison.verdict == Verdict::NonInferior {
                    ""
                } else {
                    "*"
                };
                let _ = write!(s, " {:>17}", format!("{:.3}{star}", t.comparison.difference));
            }
            let _ = write!(s, "\n{:<14} {:<8}", "", "95% CI");
            for t in &r.tasks {
                let _ = write!(
                    s,
                    " {:>17}",
                    format!("[{:.3},{:.3}]", t.comparison.ci_low, t.comparison.ci_high)
                );
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_threshold_is_all_positive() {
        let probs = [[0.2, 0.7, 0.1, 0.9, 0.5], [0.6, 0.1, 0.3, 0.2, 0.4]];
        let labels = [[1, 0, 1, 0, 1], [0, 1, 0, 1, 0]];
        let r = metrics_report(&probs, &labels, &[0.0; 5]).unwrap();
        for t in &r.tasks {
            assert_eq!((t.sensitivity, t.specificity), (Some(1.0), Some(0.0)));
        }
        assert!(r.to_text().contains("deep"));
    }
}
