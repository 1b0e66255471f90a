use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Tallies `predicted` against `truth`, both binary.
    pub fn tally(predicted: &[u8], truth: &[u8]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Accuracy, sensitivity and specificity; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn basic_metrics(c: &ConfusionCounts) -> BasicMetrics {
    BasicMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::Length {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(StatsError::Invalid("scores must be finite".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(StatsError::Invalid("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(StatsError::SingleClass);
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, with ties counted as one half. Computed from midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, StatsError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, so midranks stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, midrank (i + j + 2) / 2
        let positives = idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += positives * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// AUC as the trapezoid area under the threshold-swept ROC, accumulated in
/// integer count space.
pub fn auc_trapezoid(scores: &[f64], labels: &[u8]) -> Result<f64, StatsError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let idx = descending(scores);
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut area2 = 0u128;
    let mut i = 0;
    while i < idx.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        i = j;
    }
    Ok(area2 as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// ROC points from a threshold sweep, `(0, 0)` first and `(1, 1)` last.
/// `thresholds[k]` is the score at which point `k + 1` is reached
/// (predict positive when `score >= threshold`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    /// Conservative step interpolation: the highest tpr reached at any
    /// curve fpr not exceeding `x`.
    pub fn tpr_at(&self, x: f64) -> f64 {
        let mut best = 0.0;
        for (&f, &t) in self.fpr.iter().zip(&self.tpr) {
            if f > x {
                break;
            }
            best = t;
        }
        best
    }
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve, StatsError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let idx = descending(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut thresholds = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
        thresholds.push(s);
    }
    Ok(RocCurve {
        fpr,
        tpr,
        thresholds,
        auc: auc_trapezoid(scores, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_fixture() {
        let m = basic_metrics(&ConfusionCounts {
            tp: 40,
            fn_: 10,
            fp: 5,
            tn: 45,
        });
        assert!((m.accuracy.unwrap() - 0.85).abs() < 1e-15);
        assert!((m.sensitivity.unwrap() - 0.80).abs() < 1e-15);
        assert!((m.specificity.unwrap() - 0.90).abs() < 1e-15);
    }

    #[test]
    fn missing_positives_leave_sensitivity_undefined() {
        let m = basic_metrics(&ConfusionCounts {
            tp: 0,
            fn_: 0,
            fp: 3,
            tn: 7,
        });
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.accuracy, Some(0.7));
    }

    #[test]
    fn auc_fixtures() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        assert_eq!(auc(&s, &l).unwrap(), 0.75);
        assert_eq!(auc_trapezoid(&s, &l).unwrap(), 0.75);
        assert_eq!(auc(&[0.5; 4], &l).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &l).unwrap(), 1.0);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(StatsError::SingleClass)));
    }

    #[test]
    fn roc_points() {
        let c = roc_curve(&[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!((c.fpr, c.tpr), (vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]));
        let c = roc_curve(&[0.1, 0.9], &[1, 0]).unwrap();
        assert_eq!(
            (c.fpr.clone(), c.tpr.clone()),
            (vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 1.0])
        );
        assert_eq!(c.auc, 0.0);
    }
}
