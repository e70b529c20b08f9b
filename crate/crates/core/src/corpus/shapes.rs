//! Metadata-only manifests with the published corpus sizes. They carry no
//! audio and exist to dry-run label mapping, fold construction and
//! subsetting at full scale.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusManifest, Emotion, Style, UtteranceRecord};

/// Per-class utterance counts (angry, happy, sad, neutral).
pub fn class_counts(corpus: &str) -> Option<[usize; 4]> {
    Some(match corpus {
        "IEM" => [1103, 1636, 1084, 1708],
        "RAV" => [192, 192, 192, 96],
        "MOS" => [316, 3757, 686, 1286],
        "TF1" => [764, 761, 754, 3151],
        "TF2" => [627, 1253, 1253, 2759],
        "TM1" => [627, 1253, 1252, 1251],
        _ => return None,
    })
}

/// IEMOCAP mapped-record counts per session.
pub const IEM_SESSION_SIZES: [usize; 5] = [1085, 1023, 1151, 1031, 1241];
/// Scripted records in sessions 1-4.
pub const IEM_SCRIPTED_TRAIN: usize = 2078;

fn shuffled_labels(counts: &[(String, usize)], seed: u64) -> Vec<String> {
    let mut labels: Vec<String> = counts
        .iter()
        .flat_map(|(l, n)| std::iter::repeat_n(l.clone(), *n))
        .collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
}

fn record(corpus: &str, id: String, speaker: String, style: Style) -> UtteranceRecord {
    UtteranceRecord {
        audio_path: PathBuf::from(format!("{corpus}/{id}.wav")),
        id,
        corpus: corpus.into(),
        speaker,
        session: None,
        style,
        raw_labels: BTreeMap::new(),
        emotion: None,
        augmented: false,
        source_id: None,
    }
}

/// Unmapped IEMOCAP-shaped manifest: categorical raw labels including
/// `exc` and out-of-set classes, five sessions with two speakers each.
pub fn iemocap_raw() -> CorpusManifest {
    let kept = [
        ("ang", 1103),
        ("hap", 595),
        ("exc", 1041),
        ("sad", 1084),
        ("neu", 1708),
    ];
    let kept: Vec<(String, usize)> = kept.iter().map(|(l, n)| (l.to_string(), *n)).collect();
    let labels = shuffled_labels(&kept, 11);
    let extra = shuffled_labels(
        &[("fru".to_string(), 180), ("sur".to_string(), 40), ("xxx".to_string(), 60)],
        12,
    );

    let mut records = Vec::new();
    let mut next = 0usize;
    let train_total: usize = IEM_SESSION_SIZES[..4].iter().sum();
    let mut train_idx = 0usize;
    for (s, &size) in IEM_SESSION_SIZES.iter().enumerate() {
        let session = format!("Ses{:02}", s + 1);
        for j in 0..size {
            let style = if s < 4 {
                // spread the scripted share evenly over sessions 1-4
                let scripted = (train_idx + 1) * IEM_SCRIPTED_TRAIN / train_total
                    != train_idx * IEM_SCRIPTED_TRAIN / train_total;
                train_idx += 1;
                scripted
            } else {
                j % 2 == 0
            };
            let style = if style {
                Style::ElicitedScripted
            } else {
                Style::ElicitedImprovised
            };
            let speaker = format!("{session}{}", if j % 2 == 0 { 'F' } else { 'M' });
            let mut r = record("IEM", format!("{session}_{j:04}"), speaker, style);
            r.session = Some(session.clone());
            r.raw_labels.insert(labels[next].clone(), 1.0);
            next += 1;
            records.push(r);
        }
        for k in 0..extra.len() / 5 {
            let label = &extra[s * (extra.len() / 5) + k];
            let speaker = format!("{session}{}", if k % 2 == 0 { 'F' } else { 'M' });
            let mut r = record(
                "IEM",
                format!("{session}_x{k:03}"),
                speaker,
                Style::ElicitedImprovised,
            );
            r.session = Some(session.clone());
            r.raw_labels.insert(label.clone(), 1.0);
            records.push(r);
        }
    }
    CorpusManifest::new("IEM", records).expect("unique ids")
}

/// Already-labeled manifest with the published class counts, speakers
/// assigned round-robin.
pub fn labeled_corpus(corpus: &str, n_speakers: usize, style: Style) -> Option<CorpusManifest> {
    let counts = class_counts(corpus)?;
    let mut records = Vec::new();
    let mut idx = 0usize;
    for (e, &n) in Emotion::ALL.iter().zip(&counts) {
        for _ in 0..n {
            let speaker = if n_speakers == 1 {
                corpus.to_string()
            } else {
                format!("{corpus}_s{:02}", idx % n_speakers)
            };
            let mut r = record(corpus, format!("{corpus}_{idx:05}"), speaker, style);
            r.emotion = Some(*e);
            r.raw_labels.insert(e.as_str().into(), 1.0);
            records.push(r);
            idx += 1;
        }
    }
    Some(CorpusManifest::new(corpus, records).expect("unique ids"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_match_published_totals() {
        assert_eq!(labeled_corpus("TF1", 1, Style::Acted).unwrap().len(), 5430);
        assert_eq!(labeled_corpus("TF2", 1, Style::Acted).unwrap().len(), 5892);
        assert_eq!(labeled_corpus("TM1", 1, Style::Acted).unwrap().len(), 4383);
        assert_eq!(labeled_corpus("RAV", 24, Style::Acted).unwrap().len(), 672);
        assert_eq!(labeled_corpus("MOS", 50, Style::Natural).unwrap().len(), 6045);
        assert!(labeled_corpus("ZZZ", 1, Style::Acted).is_none());
    }

    #[test]
    fn rav_speakers_balanced() {
        let m = labeled_corpus("RAV", 24, Style::Acted).unwrap();
        assert_eq!(m.speakers().len(), 24);
    }
}
