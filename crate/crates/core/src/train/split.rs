use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainError};
use crate::corpus::subset::proportional_quotas;
use crate::corpus::CorpusManifest;
use crate::util::stable_hash64;

/// Split a training manifest into fit and validation parts.
///
/// Only original recordings are drawn: `round(n * fraction)` of them in
/// total, distributed over classes by largest remainder, each class shuffled
/// under its own seeded stream. Augmented copies stay on the fit side unless
/// their origin went to validation, in which case they are dropped.
pub fn carve_validation(
    manifest: &CorpusManifest,
    fraction: f64,
    seed: u64,
) -> Result<(CorpusManifest, CorpusManifest)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::BadConfig(format!("validation fraction {fraction}")));
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| !r.augmented) {
        let class = r.emotion.ok_or_else(|| TrainError::Unlabeled(r.id.clone()))?;
        by_class.entry(class.as_str()).or_default().push(&r.id);
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let total = (sizes.iter().sum::<usize>() as f64 * fraction).round() as usize;
    let quotas = proportional_quotas(&sizes, total);

    let mut val: BTreeSet<&str> = BTreeSet::new();
    for ((class, ids), &q) in by_class.iter_mut().zip(&quotas) {
        if q >= ids.len() && q > 0 {
            return Err(TrainError::TooFewPerClass(class.to_string()));
        }
        ids.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(&[b"validation", &seed.to_le_bytes(), class.as_bytes()]));
        ids.shuffle(&mut rng);
        val.extend(&ids[..q]);
    }
    let fit_ids = manifest
        .records
        .iter()
        .filter(|r| !val.contains(r.origin_id()))
        .map(|r| r.id.as_str());
    let fit = manifest.select(fit_ids);
    let val = manifest.select(val.iter().copied());
    Ok((fit, val))
}
