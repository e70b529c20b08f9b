//! Utterance manifests, label mapping rules, fold construction and
//! balanced subsetting.

pub(crate) mod folds;
mod labels;
pub mod shapes;
pub(crate) mod subset;

pub use folds::{
    make_folds, make_folds_proportional, make_folds_session_holdout, make_folds_speaker_rotation,
    make_split_80_20, Fold, FoldPlan, FoldStrategy,
};
pub use labels::{
    apply_label_map, canonical_emotion, map_labels_enterface, map_labels_iemocap,
    map_labels_mosei, DiscardSummary, LabelMap, MOSEI_EMOTIONS,
};
pub use subset::{filter_style, subsample_balanced};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::util::atomic_write;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate utterance id '{0}'")]
    DuplicateId(String),
    #[error("line {line}: missing field '{field}'")]
    MissingField { line: usize, field: String },
    #[error("line {line}: unknown style '{style}'")]
    UnknownStyle { line: usize, style: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("need more than {needed} speakers, found {found}")]
    TooFewSpeakers { needed: usize, found: usize },
    #[error("record '{0}' has no session")]
    MissingSession(String),
    #[error("class '{0}' has too few utterances to split")]
    ClassTooSmall(String),
    #[error("invalid split fraction {0}")]
    BadFraction(f64),
    #[error("corpus '{corpus}': requested {requested} utterances, only {available} available")]
    NotEnoughUtterances {
        corpus: String,
        requested: usize,
        available: usize,
    },
    #[error("invalid fold plan: {0}")]
    InvalidPlan(String),
    #[error("unknown fold strategy '{0}'; valid strategies: speaker-rotation, session-holdout, proportional, split-80-20")]
    UnknownStrategy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Canonical emotion classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Angry,
    Happy,
    Sad,
    Neutral,
}

impl Emotion {
    pub const ALL: [Emotion; 4] = [Emotion::Angry, Emotion::Happy, Emotion::Sad, Emotion::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Angry => "angry",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Neutral => "neutral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Emotion::ALL.get(i).copied()
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown emotion '{s}'"))
    }
}

impl AsRef<str> for Emotion {
    fn as_ref(&self) -> &str {
        self.as_str()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    Acted,
    ElicitedScripted,
    ElicitedImprovised,
    Natural,
}

impl Style {
    pub const ALL: [Style; 4] = [
        Style::Acted,
        Style::ElicitedScripted,
        Style::ElicitedImprovised,
        Style::Natural,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Acted => "acted",
            Style::ElicitedScripted => "elicited-scripted",
            Style::ElicitedImprovised => "elicited-improvised",
            Style::Natural => "natural",
        }
    }
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Style::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown style '{s}'"))
    }
}

/// One utterance and its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub audio_path: PathBuf,
    pub corpus: String,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub style: Style,
    #[serde(default)]
    pub raw_labels: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub augmented: bool,
    /// For augmented records: the utterance they were rendered from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl UtteranceRecord {
    /// Id of the original recording (itself unless augmented).
    pub fn origin_id(&self) -> &str {
        self.source_id.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub name: String,
    pub records: Vec<UtteranceRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    name: String,
}

impl CorpusManifest {
    /// Build a manifest, rejecting duplicate ids.
    pub fn new(name: impl Into<String>, records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-class counts of labeled records, derived on demand.
    pub fn class_counts(&self) -> BTreeMap<Emotion, usize> {
        let mut counts = BTreeMap::new();
        for e in self.records.iter().filter_map(|r| r.emotion) {
            *counts.entry(e).or_insert(0) += 1;
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn index(&self) -> BTreeMap<&str, &UtteranceRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    /// Sub-manifest with only the given ids, keeping manifest order.
    pub fn select<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> CorpusManifest {
        let wanted: HashSet<&str> = ids.into_iter().collect();
        CorpusManifest {
            name: self.name.clone(),
            records: self
                .records
                .iter()
                .filter(|r| wanted.contains(r.id.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Concatenate manifests; ids must stay unique.
    pub fn merge(name: impl Into<String>, parts: &[&CorpusManifest]) -> Result<Self> {
        let records = parts.iter().flat_map(|m| m.records.iter().cloned()).collect();
        Self::new(name, records)
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.records.iter().map(|r| r.speaker.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Resolve relative audio paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for r in &mut self.records {
            if r.audio_path.is_relative() {
                r.audio_path = base.join(&r.audio_path);
            }
        }
    }

    pub fn to_jsonl(&self) -> String {
        let header = serde_json::json!({ "manifest": Header {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
        }});
        let mut out = header.to_string();
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

const REQUIRED: [&str; 5] = ["id", "audio_path", "corpus", "speaker", "style"];

fn parse_record(line_no: usize, value: Value) -> Result<UtteranceRecord> {
    let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
        line: line_no,
        message: "expected a JSON object".into(),
    })?;
    for field in REQUIRED {
        if obj.get(field).is_none_or(Value::is_null) {
            return Err(CorpusError::MissingField {
                line: line_no,
                field: field.into(),
            });
        }
    }
    if let Some(v) = obj.get("schema_version") {
        if v.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("unsupported schema_version {v}"),
            });
        }
    }
    let style = obj["style"].as_str().unwrap_or_default();
    if style.parse::<Style>().is_err() {
        return Err(CorpusError::UnknownStyle {
            line: line_no,
            style: obj["style"].to_string().trim_matches('"').to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| CorpusError::Parse {
        line: line_no,
        message: e.to_string(),
    })
}

/// Load a JSON-lines manifest. An optional first line `{"manifest": {...}}`
/// carries the schema version and name; otherwise the name is the file stem.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(h) = value.get("manifest") {
            let header: Header =
                serde_json::from_value(h.clone()).map_err(|e| CorpusError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if header.schema_version != SCHEMA_VERSION {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("unsupported schema_version {}", header.schema_version),
                });
            }
            name = header.name;
            continue;
        }
        records.push(parse_record(line_no, value)?);
    }
    CorpusManifest::new(name, records)
}

/// Compare strings with embedded numbers by numeric value ("s2" < "s10").
pub fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(&cb) {
        let ord = if *da && *db {
            let na = sa.trim_start_matches('0');
            let nb = sb.trim_start_matches('0');
            na.len().cmp(&nb.len()).then(na.cmp(nb))
        } else {
            sa.cmp(sb)
        };
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then(a.cmp(b))
}

#[cfg(test)]
pub(crate) fn test_record(id: &str, speaker: &str, emotion: Option<Emotion>) -> UtteranceRecord {
    UtteranceRecord {
        id: id.into(),
        audio_path: PathBuf::from(format!("{id}.wav")),
        corpus: "T".into(),
        speaker: speaker.into(),
        session: None,
        style: Style::Acted,
        raw_labels: BTreeMap::new(),
        emotion,
        augmented: false,
        source_id: None,
    }
}
