use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::StatsError;
use crate::data::{apportion, DatasetManifest};

/// Draws `n` images stratified on the 5-bit label vector. Each stratum
/// receives a share proportional to its size (largest remainder); members
/// are picked by a seeded shuffle and returned in manifest order.
pub fn stratified_subsample(manifest: &DatasetManifest, n: usize, seed: u64) -> Result<DatasetManifest, StatsError> {
    if n > manifest.len() {
        return Err(StatsError::Invalid(format!(
            "cannot draw {n} images from {}",
            manifest.len()
        )));
    }
    let mut strata: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, s) in manifest.samples.iter().enumerate() {
        strata.entry(s.stratum()).or_default().push(i);
    }
    if n < strata.len() {
        return Err(StatsError::Invalid(format!(
            "sample size {n} is below the {} nonempty label strata",
            strata.len()
        )));
    }
    let total = manifest.len() as f64;
    let fractions: Vec<f64> = strata.values().map(|m| m.len() as f64 / total).collect();
    let quotas = apportion(n, &fractions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(n);
    for (mut members, k) in strata.into_values().zip(quotas) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..k.min(members.len())]);
    }
    picked.sort_unstable();
    Ok(manifest.subset(&picked))
}
