use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetManifest};

/// Train/validation/test fractions by patient count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.685,
            val: 0.115,
            test: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let f = self.fractions();
        if f.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || self.train <= 0.0 || self.test <= 0.0 {
            return Err(DataError::Split(format!(
                "train and test fractions must be positive and val non-negative, got {f:?}"
            )));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Split(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` items across `fractions`.
/// Ties in the remainder go to the earlier slot.
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Partitions by patient: patients are sorted, shuffled with the spec's
/// seed, and dealt out in apportioned blocks. Every patient's images land in
/// exactly one split, and each split keeps manifest order.
pub fn split_by_patient(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<Splits, DataError> {
    spec.validate()?;
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        by_patient.entry(s.patient_id.as_str()).or_default().push(i);
    }
    if by_patient.len() < 3 {
        return Err(DataError::Split(format!(
            "need at least 3 patients, found {}",
            by_patient.len()
        )));
    }
    let mut patients: Vec<&str> = by_patient.keys().copied().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let fractions = spec.fractions();
    let counts = apportion(patients.len(), &fractions);
    for ((name, &f), &c) in ["train", "val", "test"].iter().zip(&fractions).zip(&counts) {
        if f > 0.0 && c == 0 {
            return Err(DataError::Split(format!(
                "{name} fraction {f} rounds to zero of {} patients",
                patients.len()
            )));
        }
    }

    let mut assignment = vec![0u8; manifest.len()];
    let mut offset = 0;
    for (split, &count) in counts.iter().enumerate() {
        for p in &patients[offset..offset + count] {
            for &i in &by_patient[p] {
                assignment[i] = split as u8;
            }
        }
        offset += count;
    }
    let pick = |split: u8| {
        let idx: Vec<usize> = (0..manifest.len()).filter(|&i| assignment[i] == split).collect();
        manifest.subset(&idx)
    };
    Ok(Splits {
        train: pick(0),
        val: pick(1),
        test: pick(2),
    })
}
