use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CorpusManifest, Emotion, UtteranceRecord};

/// Emotions scored in multi-label annotations, each in `[0, 3]`.
pub const MOSEI_EMOTIONS: [&str; 6] = [
    "anger",
    "disgust",
    "fear",
    "happiness",
    "sadness",
    "surprise",
];

/// Named label-mapping rule applied before fold construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMap {
    /// Raw label names that already are (aliases of) the four classes.
    Direct,
    /// Excited merged into happy; everything outside the four classes dropped.
    Iemocap,
    /// Multi-label scores: all-zero is neutral, one unequivocal target kept.
    Mosei,
    /// Test-only corpus: speaker 6 removed, angry/happy/sad only.
    Enterface,
}

impl FromStr for LabelMap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(LabelMap::Direct),
            "iemocap" => Ok(LabelMap::Iemocap),
            "mosei" => Ok(LabelMap::Mosei),
            "enterface" => Ok(LabelMap::Enterface),
            _ => Err(format!(
                "unknown label map '{s}'; valid: direct, iemocap, mosei, enterface"
            )),
        }
    }
}

/// Counts of dropped records keyed by the reason (usually the raw label).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscardSummary {
    pub kept: usize,
    pub dropped: BTreeMap<String, usize>,
}

impl DiscardSummary {
    fn drop(&mut self, reason: impl Into<String>) {
        *self.dropped.entry(reason.into()).or_insert(0) += 1;
    }

    pub fn total_dropped(&self) -> usize {
        self.dropped.values().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("reason,count\n");
        for (reason, n) in &self.dropped {
            let _ = writeln!(out, "{reason},{n}");
        }
        let _ = writeln!(out, "kept,{}", self.kept);
        out
    }
}

/// Map common raw label spellings onto the canonical classes.
pub fn canonical_emotion(raw: &str) -> Option<Emotion> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "angry" | "anger" | "ang" => Some(Emotion::Angry),
        "happy" | "happiness" | "hap" | "joy" => Some(Emotion::Happy),
        "sad" | "sadness" => Some(Emotion::Sad),
        "neutral" | "neu" => Some(Emotion::Neutral),
        _ => None,
    }
}

/// The raw categorical label: highest score, ties broken by name.
fn top_label(r: &UtteranceRecord) -> Option<&str> {
    r.raw_labels
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.as_str())
}

fn relabel(
    manifest: &CorpusManifest,
    mut rule: impl FnMut(&UtteranceRecord) -> Result<Emotion, String>,
) -> (CorpusManifest, DiscardSummary) {
    let mut summary = DiscardSummary::default();
    let mut records = Vec::new();
    for r in &manifest.records {
        match rule(r) {
            Ok(e) => {
                let mut r = r.clone();
                r.emotion = Some(e);
                records.push(r);
                summary.kept += 1;
            }
            Err(reason) => summary.drop(reason),
        }
    }
    (
        CorpusManifest {
            name: manifest.name.clone(),
            records,
        },
        summary,
    )
}

fn direct_label(r: &UtteranceRecord) -> Result<Emotion, String> {
    if let Some(e) = r.emotion {
        return Ok(e);
    }
    let raw = top_label(r).ok_or_else(|| "unlabeled".to_string())?;
    canonical_emotion(raw).ok_or_else(|| raw.to_string())
}

pub fn map_labels_iemocap(manifest: &CorpusManifest) -> (CorpusManifest, DiscardSummary) {
    relabel(manifest, |r| {
        let raw = top_label(r).ok_or_else(|| "unlabeled".to_string())?;
        match raw.trim().to_ascii_lowercase().as_str() {
            "excited" | "exc" => Ok(Emotion::Happy),
            other => canonical_emotion(other).ok_or_else(|| raw.to_string()),
        }
    })
}

pub fn map_labels_mosei(manifest: &CorpusManifest) -> (CorpusManifest, DiscardSummary) {
    relabel(manifest, |r| {
        let score = |name: &str| r.raw_labels.get(name).copied().unwrap_or(0.0);
        let positive: Vec<&str> = MOSEI_EMOTIONS
            .into_iter()
            .filter(|e| score(e) > 0.0)
            .collect();
        match positive.as_slice() {
            [] => Ok(Emotion::Neutral),
            ["anger"] => Ok(Emotion::Angry),
            ["happiness"] => Ok(Emotion::Happy),
            ["sadness"] => Ok(Emotion::Sad),
            [single] => Err(single.to_string()),
            _ => Err("equivocal".to_string()),
        }
    })
}

fn is_speaker_six(speaker: &str) -> bool {
    let digits: String = speaker.chars().filter(|c| c.is_ascii_digit()).collect();
    digits.parse::<u32>() == Ok(6)
}

pub fn map_labels_enterface(manifest: &CorpusManifest) -> (CorpusManifest, DiscardSummary) {
    relabel(manifest, |r| {
        if is_speaker_six(&r.speaker) {
            return Err("speaker-6".to_string());
        }
        match direct_label(r)? {
            Emotion::Neutral => Err("neutral".to_string()),
            e => Ok(e),
        }
    })
}

pub fn apply_label_map(
    manifest: &CorpusManifest,
    map: LabelMap,
) -> (CorpusManifest, DiscardSummary) {
    match map {
        LabelMap::Direct => relabel(manifest, direct_label),
        LabelMap::Iemocap => map_labels_iemocap(manifest),
        LabelMap::Mosei => map_labels_mosei(manifest),
        LabelMap::Enterface => map_labels_enterface(manifest),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::shapes;
    use crate::corpus::test_record;

    fn labeled(id: &str, labels: &[(&str, f64)]) -> UtteranceRecord {
        let mut r = test_record(id, "s1", None);
        r.raw_labels = labels.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        r
    }

    #[test]
    fn excited_merges_into_happy() {
        let mut records = Vec::new();
        for i in 0..595 {
            records.push(labeled(&format!("h{i}"), &[("hap", 1.0)]));
        }
        for i in 0..1041 {
            records.push(labeled(&format!("e{i}"), &[("exc", 1.0)]));
        }
        records.push(labeled("f0", &[("fru", 1.0)]));
        let m = CorpusManifest::new("IEM", records).unwrap();
        let (mapped, summary) = map_labels_iemocap(&m);
        assert_eq!(mapped.class_counts()[&Emotion::Happy], 1636);
        assert_eq!(summary.dropped.get("fru"), Some(&1));
        assert_eq!(summary.kept, 1636);
    }

    #[test]
    fn paper_shaped_iemocap_counts() {
        let (mapped, summary) = map_labels_iemocap(&shapes::iemocap_raw());
        let c = mapped.class_counts();
        assert_eq!(c[&Emotion::Angry], 1103);
        assert_eq!(c[&Emotion::Happy], 1636);
        assert_eq!(c[&Emotion::Sad], 1084);
        assert_eq!(c[&Emotion::Neutral], 1708);
        assert_eq!(mapped.len(), 5531);
        assert!(summary.total_dropped() > 0);
        assert!(summary.to_csv().starts_with("reason,count\n"));
    }

    #[test]
    fn mosei_rules() {
        let m = CorpusManifest::new(
            "MOS",
            vec![
                labeled("zero", &[("anger", 0.0), ("sadness", 0.0)]),
                labeled("empty", &[]),
                labeled("happy", &[("happiness", 2.0), ("anger", 0.0)]),
                labeled("mixed", &[("happiness", 1.0), ("sadness", 1.0)]),
                labeled("fear", &[("fear", 0.66)]),
                labeled("angry", &[("anger", 3.0)]),
            ],
        )
        .unwrap();
        let (mapped, summary) = map_labels_mosei(&m);
        let got: Vec<(&str, Emotion)> = mapped
            .records
            .iter()
            .map(|r| (r.id.as_str(), r.emotion.unwrap()))
            .collect();
        assert_eq!(
            got,
            [
                ("zero", Emotion::Neutral),
                ("empty", Emotion::Neutral),
                ("happy", Emotion::Happy),
                ("angry", Emotion::Angry),
            ]
        );
        assert_eq!(summary.dropped["equivocal"], 1);
        assert_eq!(summary.dropped["fear"], 1);
    }

    #[test]
    fn enterface_protocol() {
        let mut a = labeled("a", &[("anger", 1.0)]);
        a.speaker = "subject 6".into();
        let mut b = labeled("b", &[("happiness", 1.0)]);
        b.speaker = "subject 16".into();
        let mut c = labeled("c", &[("neutral", 1.0)]);
        c.speaker = "subject 1".into();
        let m = CorpusManifest::new("ENT", vec![a, b, c]).unwrap();
        let (mapped, summary) = map_labels_enterface(&m);
        assert_eq!(mapped.len(), 1);
        assert_eq!(mapped.records[0].emotion, Some(Emotion::Happy));
        assert_eq!(summary.dropped["speaker-6"], 1);
    }

    #[test]
    fn mapping_is_deterministic_and_idempotent() {
        let m = shapes::iemocap_raw();
        let (a, _) = map_labels_iemocap(&m);
        let (b, _) = map_labels_iemocap(&m);
        assert_eq!(a, b);
        let (direct, s) = apply_label_map(&a, LabelMap::Direct);
        assert_eq!(direct, a);
        assert_eq!(s.total_dropped(), 0);
    }
}
