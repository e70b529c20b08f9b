use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{natural_cmp, CorpusError, CorpusManifest, Result};
use crate::util::{stable_hash64, write_json_pretty};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FoldStrategy {
    SpeakerRotation { n_folds: usize, test_speakers: usize },
    /// Fold k holds out the k-th session in natural order, or the k-th from
    /// the end when `reverse` is set.
    SessionHoldout { reverse: bool },
    Proportional { n_folds: usize, test_fraction: f64 },
    #[serde(rename = "split-80-20")]
    Split8020,
}

impl FoldStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            FoldStrategy::SpeakerRotation { .. } => "speaker-rotation",
            FoldStrategy::SessionHoldout { .. } => "session-holdout",
            FoldStrategy::Proportional { .. } => "proportional",
            FoldStrategy::Split8020 => "split-80-20",
        }
    }
}

impl FromStr for FoldStrategy {
    type Err = CorpusError;

    /// Strategy by name with its default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker-rotation" => Ok(FoldStrategy::SpeakerRotation {
                n_folds: 5,
                test_speakers: 5,
            }),
            "session-holdout" => Ok(FoldStrategy::SessionHoldout { reverse: false }),
            "proportional" => Ok(FoldStrategy::Proportional {
                n_folds: 5,
                test_fraction: 0.2,
            }),
            "split-80-20" => Ok(FoldStrategy::Split8020),
            other => Err(CorpusError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub corpus: String,
    pub strategy: FoldStrategy,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_pretty(path, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Re-check every structural invariant of the plan against `manifest`.
    pub fn validate(&self, manifest: &CorpusManifest) -> Result<()> {
        let index = manifest.index();
        let bad = |m: String| Err(CorpusError::InvalidPlan(m));
        for (k, fold) in self.folds.iter().enumerate() {
            if let Some(id) = fold.train_ids.intersection(&fold.test_ids).next() {
                return bad(format!("fold {k}: '{id}' in both train and test"));
            }
            for id in fold.train_ids.iter().chain(&fold.test_ids) {
                if !index.contains_key(id.as_str()) {
                    return bad(format!("fold {k}: unknown id '{id}'"));
                }
            }
            for id in &fold.test_ids {
                if index[id.as_str()].augmented {
                    return bad(format!("fold {k}: augmented record '{id}' in test set"));
                }
            }
            for id in &fold.train_ids {
                let origin = index[id.as_str()].origin_id();
                if origin != id && fold.test_ids.contains(origin) {
                    return bad(format!("fold {k}: '{id}' derives from test record '{origin}'"));
                }
            }
            let group = |ids: &BTreeSet<String>, f: &dyn Fn(&str) -> Option<String>| {
                ids.iter()
                    .filter_map(|id| f(id))
                    .collect::<BTreeSet<String>>()
            };
            let disjoint_on = |name: &str, f: &dyn Fn(&str) -> Option<String>| {
                let train = group(&fold.train_ids, f);
                let test = group(&fold.test_ids, f);
                match train.intersection(&test).next() {
                    Some(shared) => Err(CorpusError::InvalidPlan(format!(
                        "fold {k}: {name} '{shared}' on both sides"
                    ))),
                    None => Ok(()),
                }
            };
            match self.strategy {
                FoldStrategy::SpeakerRotation { .. } => {
                    disjoint_on("speaker", &|id| Some(index[id].speaker.clone()))?
                }
                FoldStrategy::SessionHoldout { .. } => {
                    disjoint_on("session", &|id| index[id].session.clone())?
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Dispatch on a strategy.
pub fn make_folds(manifest: &CorpusManifest, strategy: &FoldStrategy, seed: u64) -> Result<FoldPlan> {
    match *strategy {
        FoldStrategy::SpeakerRotation {
            n_folds,
            test_speakers,
        } => make_folds_speaker_rotation(manifest, n_folds, test_speakers),
        FoldStrategy::SessionHoldout { reverse } => make_folds_session_holdout(manifest, reverse),
        FoldStrategy::Proportional {
            n_folds,
            test_fraction,
        } => make_folds_proportional(manifest, n_folds, test_fraction, seed),
        FoldStrategy::Split8020 => make_split_80_20(manifest, seed),
    }
}

fn split_by<F>(manifest: &CorpusManifest, is_test: F) -> Fold
where
    F: Fn(&super::UtteranceRecord) -> bool,
{
    let mut fold = Fold {
        train_ids: BTreeSet::new(),
        test_ids: BTreeSet::new(),
    };
    for r in &manifest.records {
        if is_test(r) {
            fold.test_ids.insert(r.id.clone());
        } else {
            fold.train_ids.insert(r.id.clone());
        }
    }
    fold
}

/// Sorted speakers; fold k tests speakers `k*t .. k*t + t` with wrap-around.
pub fn make_folds_speaker_rotation(
    manifest: &CorpusManifest,
    n_folds: usize,
    test_speakers: usize,
) -> Result<FoldPlan> {
    let mut speakers = manifest.speakers();
    speakers.sort_by(|a, b| natural_cmp(a, b));
    let needed = test_speakers.max(n_folds.saturating_sub(1));
    if test_speakers == 0 || n_folds == 0 || speakers.len() <= needed {
        return Err(CorpusError::TooFewSpeakers {
            needed,
            found: speakers.len(),
        });
    }
    let folds = (0..n_folds)
        .map(|k| {
            let test: BTreeSet<&str> = (0..test_speakers)
                .map(|j| speakers[(k * test_speakers + j) % speakers.len()].as_str())
                .collect();
            split_by(manifest, |r| test.contains(r.speaker.as_str()))
        })
        .collect();
    Ok(FoldPlan {
        corpus: manifest.name.clone(),
        strategy: FoldStrategy::SpeakerRotation {
            n_folds,
            test_speakers,
        },
        seed: 0,
        folds,
    })
}

/// Leave-one-session-out.
pub fn make_folds_session_holdout(manifest: &CorpusManifest, reverse: bool) -> Result<FoldPlan> {
    let mut sessions = BTreeSet::new();
    for r in &manifest.records {
        match &r.session {
            Some(s) => {
                sessions.insert(s.clone());
            }
            None => return Err(CorpusError::MissingSession(r.id.clone())),
        }
    }
    let mut sessions: Vec<String> = sessions.into_iter().collect();
    sessions.sort_by(|a, b| natural_cmp(a, b));
    if reverse {
        sessions.reverse();
    }
    let folds = sessions
        .iter()
        .map(|s| split_by(manifest, |r| r.session.as_deref() == Some(s.as_str())))
        .collect();
    Ok(FoldPlan {
        corpus: manifest.name.clone(),
        strategy: FoldStrategy::SessionHoldout { reverse },
        seed: 0,
        folds,
    })
}

/// Labeled ids grouped by class, each group sorted.
fn ids_by_class(manifest: &CorpusManifest) -> BTreeMap<String, Vec<String>> {
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &manifest.records {
        let key = r.emotion.map_or("unlabeled", |e| e.as_str()).to_string();
        groups.entry(key).or_default().push(r.id.clone());
    }
    for ids in groups.values_mut() {
        ids.sort();
    }
    groups
}

pub(crate) fn class_rng(seed: u64, fold: usize, class: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash64(&[
        &seed.to_le_bytes(),
        &(fold as u64).to_le_bytes(),
        class.as_bytes(),
    ]))
}

/// Per fold and class, a seeded random `round(n * test_fraction)` go to test.
pub fn make_folds_proportional(
    manifest: &CorpusManifest,
    n_folds: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<FoldPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let groups = ids_by_class(manifest);
    if groups.is_empty() {
        return Err(CorpusError::ClassTooSmall("<all>".into()));
    }
    if let Some((class, _)) = groups.iter().find(|(_, ids)| ids.len() < 2) {
        return Err(CorpusError::ClassTooSmall(class.clone()));
    }
    let folds = (0..n_folds)
        .map(|k| {
            let mut fold = Fold {
                train_ids: BTreeSet::new(),
                test_ids: BTreeSet::new(),
            };
            for (class, ids) in &groups {
                let mut ids = ids.clone();
                ids.shuffle(&mut class_rng(seed, k, class));
                let n_test = ((ids.len() as f64 * test_fraction).round() as usize)
                    .clamp(1, ids.len() - 1);
                fold.test_ids.extend(ids.drain(..n_test));
                fold.train_ids.extend(ids);
            }
            fold
        })
        .collect();
    Ok(FoldPlan {
        corpus: manifest.name.clone(),
        strategy: FoldStrategy::Proportional {
            n_folds,
            test_fraction,
        },
        seed,
        folds,
    })
}

pub fn make_split_80_20(manifest: &CorpusManifest, seed: u64) -> Result<FoldPlan> {
    let mut plan = make_folds_proportional(manifest, 1, 0.2, seed)?;
    plan.strategy = FoldStrategy::Split8020;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::shapes;
    use crate::corpus::{map_labels_iemocap, test_record, Emotion, Style};

    fn speakers_manifest(n: usize, per: usize) -> CorpusManifest {
        let mut records = Vec::new();
        for s in 0..n {
            for u in 0..per {
                let e = Emotion::ALL[u % 4];
                records.push(test_record(&format!("s{s:02}_{u}"), &format!("s{s:02}"), Some(e)));
            }
        }
        CorpusManifest::new("RAV", records).unwrap()
    }

    fn test_speakers(plan: &FoldPlan, m: &CorpusManifest, k: usize) -> BTreeSet<String> {
        plan.folds[k]
            .test_ids
            .iter()
            .map(|id| m.get(id).unwrap().speaker.clone())
            .collect()
    }

    #[test]
    fn rotation_assignment() {
        let m = speakers_manifest(24, 4);
        let plan = make_folds_speaker_rotation(&m, 5, 5).unwrap();
        let names = |ids: &[usize]| -> BTreeSet<String> {
            ids.iter().map(|i| format!("s{i:02}")).collect()
        };
        assert_eq!(test_speakers(&plan, &m, 0), names(&[0, 1, 2, 3, 4]));
        assert_eq!(test_speakers(&plan, &m, 1), names(&[5, 6, 7, 8, 9]));
        assert_eq!(test_speakers(&plan, &m, 4), names(&[20, 21, 22, 23, 0]));
        for k in 0..5 {
            let train: BTreeSet<String> = plan.folds[k]
                .train_ids
                .iter()
                .map(|id| m.get(id).unwrap().speaker.clone())
                .collect();
            assert_eq!(train.len(), 19);
            assert!(train.is_disjoint(&test_speakers(&plan, &m, k)));
        }
        plan.validate(&m).unwrap();
    }

    #[test]
    fn rotation_needs_speakers() {
        let m = speakers_manifest(4, 2);
        assert!(matches!(
            make_folds_speaker_rotation(&m, 5, 5),
            Err(CorpusError::TooFewSpeakers { found: 4, .. })
        ));
    }

    #[test]
    fn session_holdout_published_shape() {
        let (m, _) = map_labels_iemocap(&shapes::iemocap_raw());
        let plan = make_folds_session_holdout(&m, false).unwrap();
        assert_eq!(plan.folds.len(), 5);
        let sess = |k: usize| -> BTreeSet<String> {
            plan.folds[k]
                .test_ids
                .iter()
                .map(|id| m.get(id).unwrap().session.clone().unwrap())
                .collect()
        };
        assert_eq!(sess(0), BTreeSet::from(["Ses01".to_string()]));
        // union of test sets partitions the corpus
        let mut all = BTreeSet::new();
        for f in &plan.folds {
            assert!(all.is_disjoint(&f.test_ids));
            all.extend(f.test_ids.iter().cloned());
        }
        assert_eq!(all.len(), m.len());
        plan.validate(&m).unwrap();

        let rev = make_folds_session_holdout(&m, true).unwrap();
        assert_eq!(rev.folds[0].train_ids.len(), 4290);
        assert_eq!(rev.folds[0].test_ids.len(), 1241);
    }

    #[test]
    fn session_required() {
        let m = speakers_manifest(2, 2);
        assert!(matches!(
            make_folds_session_holdout(&m, false),
            Err(CorpusError::MissingSession(_))
        ));
    }

    #[test]
    fn proportional_counts_and_determinism() {
        let mut records = Vec::new();
        for i in 0..100 {
            records.push(test_record(&format!("a{i}"), "s", Some(Emotion::Angry)));
        }
        for i in 0..37 {
            records.push(test_record(&format!("b{i}"), "s", Some(Emotion::Sad)));
        }
        let m = CorpusManifest::new("X", records).unwrap();
        let plan = make_folds_proportional(&m, 5, 0.2, 9).unwrap();
        for f in &plan.folds {
            let angry = f.test_ids.iter().filter(|id| id.starts_with('a')).count();
            let sad = f.test_ids.iter().filter(|id| id.starts_with('b')).count();
            assert!((angry as i64 - 20).abs() <= 1);
            assert!((sad as f64 - 37.0 * 0.2).abs() <= 1.0);
            assert_eq!(f.test_ids.len() + f.train_ids.len(), 137);
        }
        assert_eq!(plan, make_folds_proportional(&m, 5, 0.2, 9).unwrap());
        assert_ne!(plan, make_folds_proportional(&m, 5, 0.2, 10).unwrap());
        assert!(matches!(
            make_folds_proportional(&m, 5, 1.0, 9),
            Err(CorpusError::BadFraction(_))
        ));
    }

    #[test]
    fn tiny_class_rejected() {
        let m = CorpusManifest::new(
            "X",
            vec![
                test_record("a", "s", Some(Emotion::Angry)),
                test_record("b", "s", Some(Emotion::Angry)),
                test_record("c", "s", Some(Emotion::Sad)),
            ],
        )
        .unwrap();
        assert!(matches!(
            make_split_80_20(&m, 1),
            Err(CorpusError::ClassTooSmall(c)) if c == "sad"
        ));
    }

    #[test]
    fn tf1_split_close_to_published() {
        let m = shapes::labeled_corpus("TF1", 1, Style::Acted).unwrap();
        let plan = make_split_80_20(&m, 3).unwrap();
        let f = &plan.folds[0];
        // 153 + 152 + 151 + 630 under per-class rounding
        assert_eq!(f.test_ids.len(), 1086);
        assert_eq!(f.train_ids.len(), 4344);
        let published_test = 1103.0;
        assert!((f.test_ids.len() as f64 - published_test).abs() / published_test < 0.02);
    }

    #[test]
    fn plan_json_round_trip_and_validation() {
        let m = speakers_manifest(6, 4);
        let plan = make_folds_speaker_rotation(&m, 3, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.json");
        plan.save(&p).unwrap();
        let loaded = FoldPlan::load(&p).unwrap();
        assert_eq!(loaded, plan);

        let mut broken = loaded.clone();
        let moved = broken.folds[0].test_ids.iter().next().unwrap().clone();
        broken.folds[0].train_ids.insert(moved);
        assert!(broken.validate(&m).is_err());
    }

    #[test]
    fn unknown_strategy_lists_valid_names() {
        let err = "leave-none-out".parse::<FoldStrategy>().unwrap_err();
        let msg = err.to_string();
        for name in ["speaker-rotation", "session-holdout", "proportional", "split-80-20"] {
            assert!(msg.contains(name));
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn every_strategy_yields_a_valid_partition(
            n_speakers in 4usize..16,
            per in 4usize..12,
            n_test in 1usize..4,
            seed in 0u64..1000,
        ) {
            let m = speakers_manifest(n_speakers, per);
            let strategies = [
                FoldStrategy::SpeakerRotation { n_folds: 3, test_speakers: n_test },
                FoldStrategy::Proportional { n_folds: 3, test_fraction: 0.25 },
                FoldStrategy::Split8020,
            ];
            for strategy in &strategies {
                let plan = make_folds(&m, strategy, seed).unwrap();
                plan.validate(&m).unwrap();
                for (k, f) in plan.folds.iter().enumerate() {
                    proptest::prop_assert!(f.train_ids.is_disjoint(&f.test_ids));
                    proptest::prop_assert_eq!(f.train_ids.len() + f.test_ids.len(), m.len());
                    if matches!(strategy, FoldStrategy::SpeakerRotation { .. }) {
                        let train: BTreeSet<String> =
                            f.train_ids.iter().map(|id| m.get(id).unwrap().speaker.clone()).collect();
                        proptest::prop_assert!(train.is_disjoint(&test_speakers(&plan, &m, k)));
                    }
                }
                proptest::prop_assert_eq!(&plan, &make_folds(&m, strategy, seed).unwrap());
            }
        }
    }
}
