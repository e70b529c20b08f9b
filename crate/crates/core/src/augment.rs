//! Deterministic augmentation plans and their rendering to disk.
//!
//! Every factor is a pure function of `(seed, utterance id, variant)`, so a
//! plan can be regenerated from its inputs and entries rendered in any order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{apply_effect, read_wav, write_wav, EffectKind, EffectSpec};
use crate::corpus::{CorpusError, CorpusManifest, FoldPlan, UtteranceRecord};
use crate::util::{atomic_write, stable_hash64, write_json_pretty};

pub const FACTOR_RANGE: (f64, f64) = (0.6, 1.5);

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("bad factor range [{lo}, {hi}]")]
    BadRange { lo: f64, hi: f64 },
    #[error("unknown recipe '{0}'; valid recipes: speed, volume, 2sp-2vol, 7vars")]
    UnknownRecipe(String),
    #[error("source '{0}' not in manifest")]
    MissingSource(String),
    #[error("augmented record '{0}' on the test side of a fold")]
    AugmentedInTest(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantTemplate {
    pub kind: EffectKind,
    pub range: (f64, f64),
}

impl VariantTemplate {
    fn new(kind: EffectKind) -> Self {
        Self {
            kind,
            range: FACTOR_RANGE,
        }
    }
}

/// One generated file per variant per utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecipe {
    pub name: String,
    pub variants: Vec<VariantTemplate>,
}

impl AugmentRecipe {
    pub const NAMES: [&'static str; 4] = ["speed", "volume", "2sp-2vol", "7vars"];

    pub fn named(name: &str) -> Result<Self> {
        use EffectKind::*;
        let kinds: Vec<EffectKind> = match name {
            "speed" => vec![Speed],
            "volume" => vec![Volume],
            "2sp-2vol" => vec![Speed, Speed, Volume, Volume],
            "7vars" => vec![Speed, Volume, Tempo, Bass, Treble, Overdrive, Speed],
            other => return Err(AugmentError::UnknownRecipe(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            variants: kinds.into_iter().map(VariantTemplate::new).collect(),
        })
    }

    /// Total data multiplier including the originals.
    pub fn multiplier(&self) -> usize {
        self.variants.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.variants {
            check_range(v.range)?;
        }
        Ok(())
    }
}

impl FromStr for AugmentRecipe {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self> {
        Self::named(s)
    }
}

fn check_range((lo, hi): (f64, f64)) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo < hi && lo > 0.0 {
        Ok(())
    } else {
        Err(AugmentError::BadRange { lo, hi })
    }
}

/// Uniform factor in `[lo, hi)` from a stable hash of all inputs.
pub fn draw_factor(base_seed: u64, utterance_id: &str, variant: usize, range: (f64, f64)) -> Result<f64> {
    check_range(range)?;
    let h = stable_hash64(&[
        &base_seed.to_le_bytes(),
        utterance_id.as_bytes(),
        &(variant as u64).to_le_bytes(),
    ]);
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    Ok(range.0 + u * (range.1 - range.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source_id: String,
    pub variant: usize,
    pub effect: EffectSpec,
    pub output_path: PathBuf,
}

impl PlanEntry {
    /// Id of the generated record, equal to the output file stem.
    pub fn output_id(&self) -> String {
        self.output_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub recipe: AugmentRecipe,
    pub base_seed: u64,
    pub entries: Vec<PlanEntry>,
}

impl AugmentPlan {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_pretty(path, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `|records| x |variants|` entries writing `<id>__<recipe>__v<k>.wav` under `out_dir`.
pub fn plan_augmentation(
    manifest: &CorpusManifest,
    recipe: &AugmentRecipe,
    base_seed: u64,
    out_dir: &Path,
) -> Result<AugmentPlan> {
    recipe.validate()?;
    let mut entries = Vec::with_capacity(manifest.len() * recipe.variants.len());
    for r in &manifest.records {
        for (k, v) in recipe.variants.iter().enumerate() {
            let factor = draw_factor(base_seed, &r.id, k, v.range)?;
            let file = format!("{}__{}__v{k}.wav", sanitize(&r.id), recipe.name);
            entries.push(PlanEntry {
                source_id: r.id.clone(),
                variant: k,
                effect: EffectSpec::new(v.kind, factor),
                output_path: out_dir.join(file),
            });
        }
    }
    Ok(AugmentPlan {
        recipe: recipe.clone(),
        base_seed,
        entries,
    })
}

/// Ids may contain path separators or corpus prefixes; file names may not.
fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c == '/' || c == '\\' || c == ':' { '_' } else { c })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryStatus {
    pub output_id: String,
    pub ok: bool,
    pub message: Option<String>,
    pub duration_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub entries: Vec<EntryStatus>,
}

impl AugmentSummary {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| !e.ok).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("entry,status,output_duration\n");
        for e in &self.entries {
            let status = if e.ok {
                "ok".to_string()
            } else {
                format!("error: {}", e.message.as_deref().unwrap_or("").replace([',', '\n'], ";"))
            };
            let dur = e.duration_secs.map_or(String::new(), |d| format!("{d:.4}"));
            let _ = writeln!(out, "{},{status},{dur}", e.output_id);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn render(entry: &PlanEntry, source: &UtteranceRecord) -> std::result::Result<f64, String> {
    let audio = read_wav(&source.audio_path).map_err(|e| e.to_string())?;
    let out = apply_effect(&audio, entry.effect).map_err(|e| e.to_string())?;
    write_wav(&out, &entry.output_path).map_err(|e| e.to_string())?;
    Ok(out.duration_secs())
}

/// Render every entry and return the originals plus the successfully
/// generated records. Failing entries are reported, not fatal.
pub fn apply_plan(plan: &AugmentPlan, manifest: &CorpusManifest) -> Result<(CorpusManifest, AugmentSummary)> {
    let index = manifest.index();
    let sources: Vec<&UtteranceRecord> = plan
        .entries
        .iter()
        .map(|e| {
            index
                .get(e.source_id.as_str())
                .copied()
                .ok_or_else(|| AugmentError::MissingSource(e.source_id.clone()))
        })
        .collect::<Result<_>>()?;

    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(plan.entries.len().max(1));
    let chunk = plan.entries.len().div_ceil(workers).max(1);
    let mut results: Vec<std::result::Result<f64, String>> = Vec::with_capacity(plan.entries.len());
    std::thread::scope(|s| {
        let handles: Vec<_> = plan
            .entries
            .chunks(chunk)
            .zip(sources.chunks(chunk))
            .map(|(entries, srcs)| {
                s.spawn(move || {
                    entries
                        .iter()
                        .zip(srcs)
                        .map(|(e, src)| render(e, src))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            results.extend(h.join().expect("render worker panicked"));
        }
    });

    let mut records = manifest.records.clone();
    let mut summary = AugmentSummary::default();
    for ((entry, src), result) in plan.entries.iter().zip(&sources).zip(results) {
        let output_id = entry.output_id();
        match result {
            Ok(duration) => {
                let mut r = (*src).clone();
                r.id = output_id.clone();
                r.audio_path = entry.output_path.clone();
                r.augmented = true;
                r.source_id = Some(src.origin_id().to_string());
                records.push(r);
                summary.entries.push(EntryStatus {
                    output_id,
                    ok: true,
                    message: None,
                    duration_secs: Some(duration),
                });
            }
            Err(message) => {
                log::warn!("augmentation of {output_id} failed: {message}");
                summary.entries.push(EntryStatus {
                    output_id,
                    ok: false,
                    message: Some(message),
                    duration_secs: None,
                });
            }
        }
    }
    let expanded = CorpusManifest::new(manifest.name.clone(), records)?;
    Ok((expanded, summary))
}

/// Reject fold plans whose test side holds augmented records.
pub fn guard_fold_plan(plan: &FoldPlan, manifest: &CorpusManifest) -> Result<()> {
    let augmented: BTreeSet<&str> = manifest
        .records
        .iter()
        .filter(|r| r.augmented)
        .map(|r| r.id.as_str())
        .collect();
    for fold in &plan.folds {
        if let Some(id) = fold.test_ids.iter().find(|id| augmented.contains(id.as_str())) {
            return Err(AugmentError::AugmentedInTest(id.clone()));
        }
    }
    Ok(())
}

/// Per-kind factor lists of a plan, for inspection.
pub fn factors_by_kind(plan: &AugmentPlan) -> BTreeMap<String, Vec<f64>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in &plan.entries {
        out.entry(e.effect.kind.to_string())
            .or_default()
            .push(e.effect.factor);
    }
    out
}
