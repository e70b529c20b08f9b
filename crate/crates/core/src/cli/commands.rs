use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{default_out_root, CorpusInput, ExperimentConfig, ResolvedConfig};
use super::{require_file, CliError, Result};
use crate::augment::{apply_plan, plan_augmentation, AugmentRecipe};
use crate::corpus::{apply_label_map, load_manifest, make_folds, CorpusManifest, FoldPlan, FoldStrategy, LabelMap};
use crate::eval::{build_cross_matrix, evaluate_model, CrossCorpusReport, ReportOptions, RunResult};
use crate::frontend::{FbankConfig, FbankExtractor, FeatureCache, FeatureSet};
use crate::model::{load_checkpoint, ModelGraph};
use crate::synth::{generate_corpus, SynthCorpusSpec};
use crate::train::{carve_validation, train_model, TrainRun, EXECUTION_MODE};
use crate::util::{strip_json_comments, write_json_pretty};

const EVAL_BATCH: usize = 32;

/// Load a manifest with audio paths resolved against its directory.
fn open_manifest(path: &Path) -> Result<CorpusManifest> {
    let mut m = load_manifest(path)?;
    m.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(m)
}

/// Render a synthetic corpus; returns the manifest path.
pub fn cmd_synth(spec_file: &Path, out: &Path) -> Result<PathBuf> {
    require_file(spec_file, "synth spec")?;
    let spec = SynthCorpusSpec::load(spec_file)?;
    let m = generate_corpus(&spec, out)?;
    log::info!("wrote {} utterances of '{}' to {}", m.len(), spec.name, out.display());
    Ok(out.join("manifest.jsonl"))
}

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub manifest: PathBuf,
    pub label_map: LabelMap,
    pub strategy: FoldStrategy,
    pub seed: u64,
    pub out: PathBuf,
}

/// Map labels and build folds. Writes `manifest.jsonl`, `discarded.csv` and
/// `folds.json` into `out`; returns the fold plan path.
pub fn cmd_prepare(opts: &PrepareOptions) -> Result<PathBuf> {
    require_file(&opts.manifest, "manifest")?;
    let raw = open_manifest(&opts.manifest)?;
    let (mapped, discarded) = apply_label_map(&raw, opts.label_map);
    let plan = make_folds(&mapped, &opts.strategy, opts.seed)?;
    plan.validate(&mapped)?;
    std::fs::create_dir_all(&opts.out)?;
    mapped.save(opts.out.join("manifest.jsonl"))?;
    crate::util::atomic_write(opts.out.join("discarded.csv"), discarded.to_csv().as_bytes())?;
    let path = opts.out.join("folds.json");
    plan.save(&path)?;
    log::info!(
        "{}: kept {}, dropped {}, {} folds",
        mapped.name,
        discarded.kept,
        discarded.total_dropped(),
        plan.folds.len()
    );
    Ok(path)
}

/// Expand a manifest with a named recipe. Writes `wav/`, `plan.json`,
/// `summary.csv` and, only if every entry rendered, `manifest.jsonl`.
pub fn cmd_augment(manifest: &Path, recipe: &str, seed: u64, out: &Path) -> Result<PathBuf> {
    require_file(manifest, "manifest")?;
    let recipe = AugmentRecipe::named(recipe)?;
    let m = open_manifest(manifest)?;
    let (expanded, failures) = augment_manifest(&m, &recipe, seed, out)?;
    if failures > 0 {
        return Err(CliError::runtime(format!(
            "{failures} augmentation entries failed; see {}",
            out.join("summary.csv").display()
        )));
    }
    let path = out.join("manifest.jsonl");
    expanded.save(&path)?;
    Ok(path)
}

fn augment_manifest(m: &CorpusManifest, recipe: &AugmentRecipe, seed: u64, out: &Path) -> Result<(CorpusManifest, usize)> {
    let originals = m.select(m.records.iter().filter(|r| !r.augmented).map(|r| r.id.as_str()));
    let plan = plan_augmentation(&originals, recipe, seed, &out.join("wav"))?;
    std::fs::create_dir_all(out)?;
    plan.save(out.join("plan.json"))?;
    let (expanded, summary) = apply_plan(&plan, m)?;
    summary.save_csv(out.join("summary.csv"))?;
    Ok((expanded, summary.failures()))
}

/// A corpus loaded for an experiment: label-mapped manifest, its tag and
/// (for split corpora) the fold plan.
struct LoadedCorpus {
    tag: String,
    manifest: CorpusManifest,
    plan: Option<FoldPlan>,
}

fn load_corpus(input: &CorpusInput) -> Result<LoadedCorpus> {
    require_file(&input.manifest, "manifest")?;
    let raw = open_manifest(&input.manifest)?;
    let manifest = match input.label_map {
        Some(map) => apply_label_map(&raw, map).0,
        None => raw,
    };
    let plan = match (&input.fold_plan, &input.folds) {
        (Some(path), _) => {
            require_file(path, "fold plan")?;
            Some(FoldPlan::load(path)?)
        }
        (None, Some(strategy)) => Some(make_folds(&manifest, strategy, input.fold_seed)?),
        (None, None) => None,
    };
    if let Some(p) = &plan {
        p.validate(&manifest)?;
    }
    Ok(LoadedCorpus {
        tag: manifest.name.clone(),
        manifest,
        plan,
    })
}

impl LoadedCorpus {
    fn test_ids(&self, fold: usize) -> BTreeSet<String> {
        match &self.plan {
            Some(p) => p.folds[fold].test_ids.clone(),
            None => self.manifest.ids().map(str::to_string).collect(),
        }
    }
}

/// Train and evaluate every fold of an experiment config; returns the run
/// directory (`out`, else the config's own choice).
pub fn cmd_train(config: &Path, out: Option<&Path>, resume: bool) -> Result<PathBuf> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = cfg.run_dir(out);
    run_experiment(&cfg, &dir, resume)?;
    Ok(dir)
}

fn run_experiment(cfg: &ExperimentConfig, dir: &Path, resume: bool) -> Result<()> {
    cfg.validate()?;
    let profile = cfg.profile()?;
    let resolved = ResolvedConfig {
        experiment: cfg.clone(),
        profile: profile.clone(),
        sercross_version: env!("CARGO_PKG_VERSION").into(),
        execution: EXECUTION_MODE.into(),
    };
    let config_path = dir.join("config.json");
    if resume && config_path.exists() {
        let saved: ResolvedConfig = serde_json::from_str(&std::fs::read_to_string(&config_path)?)?;
        if saved != resolved {
            return Err(CliError::validation(format!(
                "cannot resume {}: the stored config differs",
                dir.display()
            )));
        }
    }

    let train: Vec<LoadedCorpus> = cfg.train_corpora.iter().map(load_corpus).collect::<Result<_>>()?;
    let tests: Vec<LoadedCorpus> = cfg.test_corpora.iter().map(load_corpus).collect::<Result<_>>()?;
    let n_folds = train[0].plan.as_ref().map_or(0, |p| p.folds.len());
    for c in train.iter().chain(&tests) {
        if let Some(p) = &c.plan {
            if p.folds.len() != n_folds {
                return Err(CliError::validation(format!(
                    "'{}' has {} folds, expected {n_folds}",
                    c.tag,
                    p.folds.len()
                )));
            }
        }
    }
    let folds: Vec<usize> = match &cfg.only_folds {
        Some(list) => {
            if let Some(k) = list.iter().find(|&&k| k >= n_folds) {
                return Err(CliError::validation(format!("fold {k} does not exist ({n_folds} folds)")));
            }
            list.clone()
        }
        None => (0..n_folds).collect(),
    };
    let mut tags = BTreeSet::new();
    for c in train.iter().chain(&tests) {
        if !tags.insert(c.tag.clone()) {
            return Err(CliError::validation(format!("corpus '{}' listed twice", c.tag)));
        }
    }

    std::fs::create_dir_all(dir)?;
    write_json_pretty(&config_path, &resolved)?;

    let recipe = cfg.augment.as_deref().map(AugmentRecipe::named).transpose()?;
    let mut expanded = Vec::with_capacity(train.len());
    for c in &train {
        expanded.push(match &recipe {
            Some(r) => {
                let (m, failures) = augment_manifest(&c.manifest, r, cfg.augment_seed, &dir.join("augment").join(&c.tag))?;
                if failures > 0 {
                    return Err(CliError::runtime(format!("{failures} augmentation entries of '{}' failed", c.tag)));
                }
                m
            }
            None => c.manifest.clone(),
        });
    }

    let extractor = FbankExtractor::new(&profile.fbank)?;
    let cache = FeatureCache::open(dir.join("features"), &profile.fbank)?;
    let items = expanded
        .iter()
        .chain(tests.iter().map(|c| &c.manifest))
        .flat_map(|m| m.records.iter().map(|r| (r.id.as_str(), r.audio_path.as_path())));
    let features = FeatureSet::compute(items, &extractor, Some(&cache))?;

    for k in folds {
        let fold_dir = dir.join(format!("fold{k}"));
        let mut held_out = BTreeSet::new();
        let mut parts = Vec::with_capacity(train.len());
        for (c, m) in train.iter().zip(&expanded) {
            let plan = c.plan.as_ref().expect("training corpora carry a plan");
            let keep = &plan.folds[k].train_ids;
            parts.push(m.select(m.records.iter().filter(|r| keep.contains(r.origin_id())).map(|r| r.id.as_str())));
            held_out.extend(c.test_ids(k));
        }
        for c in &tests {
            held_out.extend(c.test_ids(k));
        }
        let part_refs: Vec<&CorpusManifest> = parts.iter().collect();
        let pool = CorpusManifest::merge(cfg.name.clone(), &part_refs)?;
        let (fit, val) = carve_validation(&pool, profile.train.validation_fraction, profile.train.seed)?;

        let mut model: ModelGraph<f32> = ModelGraph::build(&profile.model, profile.train.seed)?;
        let outcome = train_model(
            &mut model,
            &TrainRun {
                fit: &fit,
                val: &val,
                test_ids: &held_out,
                features: &features,
                config: &profile.train,
                out_dir: Some(&fold_dir),
                resume,
            },
        )?;
        match (outcome.best_val_ua, outcome.best_epoch) {
            (Some(ua), Some(e)) => log::info!("fold {k}: best validation UA {ua:.1} at epoch {e}"),
            _ => log::info!("fold {k}: no validation improvement recorded"),
        }

        let mut ckpt = fold_dir.join(cfg.evaluate.file_name());
        if !ckpt.exists() {
            ckpt = fold_dir.join("last.ckpt");
        }
        let (mut model, _) = load_checkpoint::<f32>(&ckpt)?;
        for c in train.iter().chain(&tests) {
            let ids = c.test_ids(k);
            let test = c.manifest.select(ids.iter().map(String::as_str));
            evaluate_into(&mut model, &test, &c.tag, &features, cfg.restrict_classes, &cfg.name, k, &fold_dir.join("eval"))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_into(
    model: &mut ModelGraph<f32>,
    test: &CorpusManifest,
    tag: &str,
    features: &FeatureSet,
    restrict: bool,
    model_tag: &str,
    fold: usize,
    out: &Path,
) -> Result<PathBuf> {
    let ev = evaluate_model(model, test, features, restrict, EVAL_BATCH)?;
    let dir = out.join(tag);
    std::fs::create_dir_all(&dir)?;
    ev.save(&dir)?;
    let result = RunResult {
        model: model_tag.to_string(),
        test: tag.to_string(),
        fold,
        metrics: ev.metrics,
    };
    let path = dir.join("result.json");
    write_json_pretty(&path, &result)?;
    log::info!("{model_tag} -> {tag} fold {fold}: UA {:.1}", ev.metrics.ua);
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub tests: Vec<PathBuf>,
    pub label_map: Option<LabelMap>,
    pub restrict_classes: bool,
    /// Front-end settings; read from the run's `config.json` when absent.
    pub fbank: Option<FbankConfig>,
    /// Report column; defaults to the run's experiment name.
    pub model_tag: Option<String>,
    pub fold: usize,
    pub out: PathBuf,
}

fn find_run_config(checkpoint: &Path) -> Option<ResolvedConfig> {
    checkpoint.ancestors().skip(1).find_map(|d| {
        let text = std::fs::read_to_string(d.join("config.json")).ok()?;
        serde_json::from_str(&text).ok()
    })
}

/// Score one checkpoint on each test manifest; returns the `result.json`
/// paths, one per test set under `out/<corpus>/`.
pub fn cmd_eval(opts: &EvalOptions) -> Result<Vec<PathBuf>> {
    require_file(&opts.checkpoint, "checkpoint")?;
    if opts.tests.is_empty() {
        return Err(CliError::validation("no test manifests given"));
    }
    let run = find_run_config(&opts.checkpoint);
    let fbank = match (&opts.fbank, &run) {
        (Some(f), _) => f.clone(),
        (None, Some(r)) => r.profile.fbank.clone(),
        (None, None) => {
            return Err(CliError::validation(
                "no front-end settings: pass them explicitly or keep the checkpoint inside its run directory",
            ))
        }
    };
    let model_tag = match (&opts.model_tag, &run) {
        (Some(t), _) => t.clone(),
        (None, Some(r)) => r.experiment.name.clone(),
        (None, None) => opts
            .checkpoint
            .file_stem()
            .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned()),
    };
    let mut tests = Vec::with_capacity(opts.tests.len());
    for path in &opts.tests {
        require_file(path, "test manifest")?;
        let raw = open_manifest(path)?;
        tests.push(match opts.label_map {
            Some(map) => apply_label_map(&raw, map).0,
            None => raw,
        });
    }
    let (mut model, _) = load_checkpoint::<f32>(&opts.checkpoint)?;
    if model.arch().n_bands() != fbank.n_bands {
        return Err(CliError::validation(format!(
            "checkpoint expects {} bands, front-end produces {}",
            model.arch().n_bands(),
            fbank.n_bands
        )));
    }
    let extractor = FbankExtractor::new(&fbank)?;
    let mut out = Vec::with_capacity(tests.len());
    for t in &tests {
        let items = t.records.iter().map(|r| (r.id.as_str(), r.audio_path.as_path()));
        let features = FeatureSet::compute(items, &extractor, None)?;
        out.push(evaluate_into(
            &mut model,
            t,
            &t.name,
            &features,
            opts.restrict_classes,
            &model_tag,
            opts.fold,
            &opts.out,
        )?);
    }
    Ok(out)
}

/// `result.json` files named by `inputs`: a directory is searched
/// recursively, anything else is a glob pattern.
fn collect_results(inputs: &[String]) -> Result<Vec<PathBuf>> {
    let mut found = BTreeSet::new();
    for input in inputs {
        let pattern = if Path::new(input).is_dir() {
            format!("{}/**/result.json", input.trim_end_matches('/'))
        } else {
            input.clone()
        };
        for entry in glob::glob(&pattern)? {
            let path = entry.map_err(|e| CliError::runtime(e.to_string()))?;
            if path.is_file() {
                found.insert(path);
            }
        }
    }
    Ok(found.into_iter().collect())
}

/// Assemble the cross-corpus matrix from per-run results and write
/// `report.json`, `report.csv` and `report.txt` into `out`.
pub fn cmd_report(inputs: &[String], options: &ReportOptions, out: &Path) -> Result<CrossCorpusReport> {
    let files = collect_results(inputs)?;
    if files.is_empty() {
        return Err(CliError::validation(format!("no result.json found under {inputs:?}")));
    }
    let mut runs = Vec::with_capacity(files.len());
    for f in &files {
        let r: RunResult = serde_json::from_str(&std::fs::read_to_string(f)?)
            .map_err(|e| CliError::validation(format!("{}: {e}", f.display())))?;
        runs.push(r);
    }
    let report = build_cross_matrix(&runs, options)?;
    std::fs::create_dir_all(out)?;
    report.save(out)?;
    Ok(report)
}

/// Synthesize corpora, run experiments and report, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    /// Output root; `corpora/`, `runs/` and `report/` go beneath it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Synth spec files, each rendered into `corpora/<name>/`.
    #[serde(default)]
    pub synth: Vec<PathBuf>,
    /// Relative manifest paths resolve against the output root.
    pub experiments: Vec<ExperimentConfig>,
    #[serde(default)]
    pub report: ReportOptions,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        require_file(path, "pipeline config")?;
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&strip_json_comments(&text))
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.synth {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        if let Some(o) = &mut cfg.out {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn root(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .unwrap_or_else(|| default_out_root().join(&self.name))
    }
}

/// Returns the report written to `<root>/report`.
pub fn cmd_pipeline(cfg: &PipelineConfig, out: Option<&Path>, resume: bool) -> Result<CrossCorpusReport> {
    let root = cfg.root(out);
    if cfg.experiments.is_empty() {
        return Err(CliError::validation("pipeline has no experiments"));
    }
    let mut experiments = cfg.experiments.clone();
    let mut names = BTreeSet::new();
    for e in &mut experiments {
        e.resolve_paths(&root);
        if !names.insert(e.name.clone()) {
            return Err(CliError::validation(format!("experiment '{}' listed twice", e.name)));
        }
    }
    let specs: Vec<SynthCorpusSpec> = cfg
        .synth
        .iter()
        .map(|p| {
            require_file(p, "synth spec")?;
            Ok(SynthCorpusSpec::load(p)?)
        })
        .collect::<Result<_>>()?;
    for s in &specs {
        generate_corpus(s, root.join("corpora").join(&s.name))?;
    }
    for e in &experiments {
        run_experiment(e, &root.join("runs").join(&e.name), resume)?;
    }
    let runs = root.join("runs").to_string_lossy().into_owned();
    cmd_report(&[runs], &cfg.report, &root.join("report"))
}
