use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::folds::class_rng;
use super::{CorpusError, CorpusManifest, Result, Style};

/// Split `total` into per-class quotas proportional to `sizes`, using
/// largest remainders so the quotas sum to `total` exactly.
pub(crate) fn proportional_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * total as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = total - quotas.iter().sum::<usize>();
    for i in order.into_iter().cycle() {
        if missing == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            missing -= 1;
        }
    }
    quotas
}

/// Draw a class-proportional, seeded subset of each corpus and merge them.
/// Merged ids are prefixed with the source manifest name.
pub fn subsample_balanced(
    name: &str,
    manifests: &[&CorpusManifest],
    per_corpus_counts: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<CorpusManifest> {
    let mut records = Vec::new();
    for m in manifests {
        let Some(&want) = per_corpus_counts.get(&m.name) else {
            continue;
        };
        if want > m.len() {
            return Err(CorpusError::NotEnoughUtterances {
                corpus: m.name.clone(),
                requested: want,
                available: m.len(),
            });
        }
        let mut groups: BTreeMap<String, Vec<&super::UtteranceRecord>> = BTreeMap::new();
        for r in &m.records {
            let key = r.emotion.map_or("unlabeled", |e| e.as_str()).to_string();
            groups.entry(key).or_default().push(r);
        }
        let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
        let quotas = proportional_quotas(&sizes, want);
        for ((class, group), quota) in groups.iter_mut().zip(quotas) {
            group.sort_by(|a, b| a.id.cmp(&b.id));
            group.shuffle(&mut class_rng(seed, 0, &format!("{}/{class}", m.name)));
            for r in group.iter().take(quota) {
                let mut r = (*r).clone();
                r.id = format!("{}:{}", m.name, r.id);
                if let Some(src) = r.source_id.as_mut() {
                    *src = format!("{}:{src}", m.name);
                }
                records.push(r);
            }
        }
    }
    if let Some(missing) = per_corpus_counts
        .keys()
        .find(|k| !manifests.iter().any(|m| &m.name == *k))
    {
        return Err(CorpusError::NotEnoughUtterances {
            corpus: missing.clone(),
            requested: per_corpus_counts[missing],
            available: 0,
        });
    }
    CorpusManifest::new(name, records)
}

pub fn filter_style(manifest: &CorpusManifest, style: Style) -> CorpusManifest {
    CorpusManifest {
        name: manifest.name.clone(),
        records: manifest
            .records
            .iter()
            .filter(|r| r.style == style)
            .cloned()
            .collect(),
    }
}
