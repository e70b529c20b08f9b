use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CliError, Result};
use crate::augment::AugmentRecipe;
use crate::corpus::{FoldStrategy, LabelMap};
use crate::train::Profile;
use crate::util::strip_json_comments;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SERCROSS_OUT";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// One corpus taking part in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusInput {
    pub manifest: PathBuf,
    #[serde(default)]
    pub label_map: Option<LabelMap>,
    /// How to split into folds. Without folds or a plan, a test corpus is
    /// evaluated whole in every fold.
    #[serde(default)]
    pub folds: Option<FoldStrategy>,
    /// Precomputed plan (from `prepare`); takes precedence over `folds`.
    #[serde(default)]
    pub fold_plan: Option<PathBuf>,
    #[serde(default)]
    pub fold_seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointChoice {
    #[default]
    Best,
    Last,
}

impl CheckpointChoice {
    pub fn file_name(self) -> &'static str {
        match self {
            CheckpointChoice::Best => "best.ckpt",
            CheckpointChoice::Last => "last.ckpt",
        }
    }
}

/// Everything one training invocation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model tag used as the report column.
    pub name: String,
    #[serde(default = "default_profile")]
    pub profile: String,
    /// Partial overrides merged into the profile's sections.
    #[serde(default)]
    pub fbank: Option<Value>,
    #[serde(default)]
    pub model: Option<Value>,
    #[serde(default)]
    pub train: Option<Value>,
    pub train_corpora: Vec<CorpusInput>,
    /// Additional (mismatched) test sets; training corpora are always tested.
    #[serde(default)]
    pub test_corpora: Vec<CorpusInput>,
    #[serde(default)]
    pub augment: Option<String>,
    #[serde(default)]
    pub augment_seed: u64,
    /// Run only these fold indices; all folds when absent.
    #[serde(default)]
    pub only_folds: Option<Vec<usize>>,
    #[serde(default)]
    pub restrict_classes: bool,
    #[serde(default)]
    pub evaluate: CheckpointChoice,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_profile() -> String {
    "desk-scale".into()
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl ExperimentConfig {
    /// Parse JSON with `//` comments; relative paths resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        super::require_file(path, "config")?;
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&strip_json_comments(&text))
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for c in self.train_corpora.iter_mut().chain(self.test_corpora.iter_mut()) {
            fix(&mut c.manifest);
            if let Some(p) = &mut c.fold_plan {
                fix(p);
            }
        }
        if let Some(p) = &mut self.out_dir {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\', ' ']) {
            return Err(CliError::validation("name must be a non-empty plain identifier"));
        }
        if self.train_corpora.is_empty() {
            return Err(CliError::validation("train_corpora must list at least one corpus"));
        }
        for c in &self.train_corpora {
            if c.folds.is_none() && c.fold_plan.is_none() {
                return Err(CliError::validation(format!(
                    "training corpus {} needs 'folds' or 'fold_plan'",
                    c.manifest.display()
                )));
            }
        }
        if let Some(r) = &self.augment {
            AugmentRecipe::named(r)?;
        }
        self.profile()?;
        Ok(())
    }

    /// The named profile with this config's overrides applied.
    pub fn profile(&self) -> Result<Profile> {
        let base = Profile::named(&self.profile)?;
        let mut v = serde_json::to_value(&base)?;
        for (key, patch) in [("fbank", &self.fbank), ("model", &self.model), ("train", &self.train)] {
            if let Some(p) = patch {
                merge(&mut v[key], p);
            }
        }
        let p: Profile = serde_json::from_value(v).map_err(|e| CliError::validation(format!("profile override: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    /// `override_dir`, else `out_dir`, else `<output root>/<name>`.
    pub fn run_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| default_out_root().join(&self.name))
    }
}

/// What a run directory records about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub experiment: ExperimentConfig,
    pub profile: Profile,
    pub sercross_version: String,
    pub execution: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("exp.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_with_comments_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            r#"{
                // desk run
                "name": "A",
                "train": {"epochs": 3, "seed": 7},
                "model": {"blstm_hidden": 8},
                "train_corpora": [{"manifest": "a/manifest.jsonl", "folds": {"kind": "split-80-20"}}]
            }"#,
        );
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!(cfg.train_corpora[0].manifest, dir.path().join("a/manifest.jsonl"));
        let prof = cfg.profile().unwrap();
        assert_eq!(prof.train.epochs, 3);
        assert_eq!(prof.train.seed, 7);
        assert_eq!(prof.train.batch_size, Profile::desk_scale().train.batch_size);
        match prof.model {
            crate::model::Architecture::CnnRnnAtt(c) => assert_eq!(c.blstm_hidden, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        for text in [
            r#"{"name": "A", "train_corpora": []}"#,
            r#"{"name": "A", "train_corpora": [{"manifest": "m"}]}"#,
            r#"{"name": "A", "augment": "9vars", "train_corpora": [{"manifest": "m", "folds": {"kind": "split-80-20"}}]}"#,
            r#"{"name": "A", "profile": "huge", "train_corpora": [{"manifest": "m", "folds": {"kind": "split-80-20"}}]}"#,
            r#"{"name": "A", "train": {"plateau_factor": 2.0}, "train_corpora": [{"manifest": "m", "folds": {"kind": "split-80-20"}}]}"#,
            r#"{"name": "A", "bogus": 1, "train_corpora": []}"#,
        ] {
            let err = ExperimentConfig::load(write(dir.path(), text)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        assert_eq!(ExperimentConfig::load(dir.path().join("none.json")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn shipped_profiles_match() {
        for (text, name) in [
            (include_str!("../../../../configs/profiles/paper-default.json"), "paper-default"),
            (include_str!("../../../../configs/profiles/desk-scale.json"), "desk-scale"),
        ] {
            let p: Profile = serde_json::from_str(&strip_json_comments(text)).unwrap();
            assert_eq!(p, Profile::named(name).unwrap());
        }
    }
}
