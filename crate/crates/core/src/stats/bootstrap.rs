//! Image-level bootstrap: percentile helpers and the vertically averaged
//! ROC confidence band.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::roc_curve;
use super::StatsError;

/// Linear-interpolation percentile of an ascending slice, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// RNG for bootstrap replicate `replicate`: one ChaCha stream per replicate,
/// so each replicate's draws do not depend on how the others ran.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

pub(crate) fn resample<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocBand {
    pub fpr: Vec<f64>,
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Bootstrap ROC band by vertical averaging over an evenly spaced fpr grid
/// of `grid` points. Replicates drawing a single class are redrawn up to
/// ten times.
pub fn roc_band(scores: &[f64], labels: &[u8], n_boot: usize, grid: usize, seed: u64) -> Result<RocBand, StatsError> {
    if n_boot < 100 {
        return Err(StatsError::Invalid(format!(
            "n_boot must be at least 100, got {n_boot}"
        )));
    }
    if grid < 2 {
        return Err(StatsError::Invalid("grid needs at least 2 points".into()));
    }
    roc_curve(scores, labels)?;
    let fpr: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let n = scores.len();
    let mut columns = vec![Vec::with_capacity(n_boot); grid];
    let (mut s, mut l) = (vec![0.0; n], vec![0u8; n]);
    for b in 0..n_boot {
        let mut rng = replicate_rng(seed, b as u64);
        let mut attempt = 0;
        let curve = loop {
            for (k, i) in resample(n, &mut rng).into_iter().enumerate() {
                s[k] = scores[i];
                l[k] = labels[i];
            }
            match roc_curve(&s, &l) {
                Ok(c) => break c,
                Err(StatsError::SingleClass) if attempt < 10 => attempt += 1,
                Err(StatsError::SingleClass) => return Err(StatsError::Degenerate(format!(
                    "bootstrap replicate {b} drew a single class 11 times; the sample is too small or too imbalanced"
                ))),
                Err(e) => return Err(e),
            }
        };
        for (col, &x) in columns.iter_mut().zip(&fpr) {
            col.push(curve.tpr_at(x));
        }
    }
    let mut lower = Vec::with_capacity(grid);
    let mut mean = Vec::with_capacity(grid);
    let mut upper = Vec::with_capacity(grid);
    for mut col in columns {
        col.sort_by(f64::total_cmp);
        let m = if col[0] == col[col.len() - 1] {
            col[0]
        } else {
            col.iter().sum::<f64>() / col.len() as f64
        };
        // a skewed column can put its mean outside the percentile interval
        lower.push(percentile(&col, 0.025).min(m));
        upper.push(percentile(&col, 0.975).max(m));
        mean.push(m);
    }
    Ok(RocBand {
        fpr,
        lower,
        mean,
        upper,
    })
}
