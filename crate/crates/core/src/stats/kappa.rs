use serde::{Deserialize, Serialize};

use super::bootstrap::{percentile, replicate_rng, resample};
use super::StatsError;

fn check_binary(a: &[u8], b: &[u8]) -> Result<(), StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Length {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(StatsError::Invalid("kappa needs at least one answer".into()));
    }
    if a.iter().chain(b).any(|&v| v > 1) {
        return Err(StatsError::Invalid("answers must be 0 or 1".into()));
    }
    Ok(())
}

/// Cohen's kappa from the 2x2 table `[[n00, n01], [n10, n11]]`, or `None`
/// when chance agreement is 1 (both raters constant and equal).
fn kappa_from_table(t: [[u64; 2]; 2]) -> Option<f64> {
    let n = (t[0][0] + t[0][1] + t[1][0] + t[1][1]) as f64;
    let po = (t[0][0] + t[1][1]) as f64 / n;
    let a1 = (t[1][0] + t[1][1]) as f64 / n;
    let b1 = (t[0][1] + t[1][1]) as f64 / n;
    let pe = a1 * b1 + (1.0 - a1) * (1.0 - b1);
    if pe >= 1.0 {
        return None;
    }
    Some((po - pe) / (1.0 - pe))
}

fn table(a: &[u8], b: &[u8], idx: impl Iterator<Item = usize>) -> [[u64; 2]; 2] {
    let mut t = [[0u64; 2]; 2];
    for i in idx {
        t[a[i] as usize][b[i] as usize] += 1;
    }
    t
}

/// `(p_o - p_e) / (1 - p_e)`; `Ok(None)` is the degenerate marker.
pub fn cohens_kappa(a: &[u8], b: &[u8]) -> Result<Option<f64>, StatsError> {
    check_binary(a, b)?;
    Ok(kappa_from_table(table(a, b, 0..a.len())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Superior,
    NonInferior,
    Inferior,
}

impl Verdict {
    /// Superior when the difference and the whole CI are above zero,
    /// inferior when both are below zero, non-inferior otherwise.
    pub fn from_ci(difference: f64, ci_low: f64, ci_high: f64) -> Verdict {
        if difference > 0.0 && ci_low > 0.0 {
            Verdict::Superior
        } else if difference < 0.0 && ci_high < 0.0 {
            Verdict::Inferior
        } else {
            Verdict::NonInferior
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Superior => "superior",
            Verdict::NonInferior => "non-inferior",
            Verdict::Inferior => "inferior",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaComparison {
    pub kappa_model: f64,
    pub kappa_rater: f64,
    /// `kappa_model - kappa_rater`.
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub verdict: Verdict,
    /// Replicates skipped because a kappa was degenerate.
    pub degenerate_replicates: usize,
}

/// Paired image-level bootstrap of `kappa(model, truth) - kappa(rater, truth)`
/// with 95% percentile CI.
pub fn kappa_difference_ci(
    model: &[u8],
    rater: &[u8],
    truth: &[u8],
    n_boot: usize,
    seed: u64,
) -> Result<KappaComparison, StatsError> {
    check_binary(model, truth)?;
    check_binary(rater, truth)?;
    if n_boot == 0 {
        return Err(StatsError::Invalid("n_boot must be positive".into()));
    }
    let degenerate =
        |who: &str| StatsError::Degenerate(format!("kappa of {who} against truth is undefined (constant answers)"));
    let kappa_model = cohens_kappa(model, truth)?.ok_or_else(|| degenerate("model"))?;
    let kappa_rater = cohens_kappa(rater, truth)?.ok_or_else(|| degenerate("rater"))?;

    let n = truth.len();
    let mut diffs = Vec::with_capacity(n_boot);
    let mut skipped = 0;
    for b in 0..n_boot {
        let idx = resample(n, &mut replicate_rng(seed, b as u64));
        let km = kappa_from_table(table(model, truth, idx.iter().copied()));
        let kr = kappa_from_table(table(rater, truth, idx.iter().copied()));
        match (km, kr) {
            (Some(m), Some(r)) => diffs.push(m - r),
            _ => skipped += 1,
        }
    }
    if skipped * 10 > n_boot {
        return Err(StatsError::Degenerate(format!(
            "kappa was undefined in {skipped} of {n_boot} bootstrap replicates; use a larger evaluation set"
        )));
    }
    diffs.sort_by(f64::total_cmp);
    let difference = kappa_model - kappa_rater;
    let (ci_low, ci_high) = (percentile(&diffs, 0.025), percentile(&diffs, 0.975));
    Ok(KappaComparison {
        kappa_model,
        kappa_rater,
        difference,
        ci_low,
        ci_high,
        verdict: Verdict::from_ci(difference, ci_low, ci_high),
        degenerate_replicates: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_counts(tp: usize, fn_: usize, fp: usize, tn: usize) -> (Vec<u8>, Vec<u8>) {
        let mut rater = Vec::new();
        let mut truth = Vec::new();
        for (r, t, n) in [(1, 1, tp), (0, 1, fn_), (1, 0, fp), (0, 0, tn)] {
            rater.extend(std::iter::repeat(r).take(n));
            truth.extend(std::iter::repeat(t).take(n));
        }
        (rater, truth)
    }

    #[test]
    fn two_by_two_fixture() {
        let (r, t) = from_counts(40, 10, 5, 45);
        assert!((cohens_kappa(&r, &t).unwrap().unwrap() - 0.70).abs() < 1e-12);
    }

    #[test]
    fn identical_answers() {
        let a = [0, 1, 1, 0, 1];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), Some(1.0));
        assert_eq!(cohens_kappa(&[1, 1], &[1, 1]).unwrap(), None);
    }

    #[test]
    fn paired_identity_is_non_inferior() {
        let (r, t) = from_counts(30, 12, 9, 49);
        let c = kappa_difference_ci(&r, &r, &t, 500, 4).unwrap();
        assert_eq!((c.difference, c.ci_low, c.ci_high), (0.0, 0.0, 0.0));
        assert_eq!(c.verdict, Verdict::NonInferior);
    }

    #[test]
    fn published_fixtures() {
        assert_eq!(Verdict::from_ci(0.189, 0.085, 0.291), Verdict::Superior);
        assert_eq!(Verdict::from_ci(-0.007, -0.117, 0.107), Verdict::NonInferior);
        assert_eq!(Verdict::from_ci(-0.2, -0.3, -0.1), Verdict::Inferior);
    }
}
