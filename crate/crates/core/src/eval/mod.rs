//! Confusion matrices, the four reported accuracy variants, fold
//! aggregation, model evaluation and cross-corpus report assembly.
//!
//! UA is the one-vs-rest accuracy `(tp + tn) / (tp + tn + fp + fn)` and WA the
//! one-vs-rest balanced accuracy `(tp / (tp + fn) + tn / (tn + fp)) / 2`; both
//! reduce to their binary definitions for two classes and are macro-averaged
//! over classes otherwise. Mean class recall and overall accuracy are always
//! reported alongside.

mod predict;
mod report;

pub use predict::{evaluate_model, Classifier, Evaluation, Prediction};
pub use report::{
    build_cross_matrix, Cell, CellStatus, CrossCorpusReport, GlobalAverage, ReportOptions, RunResult,
    REPORT_SCHEMA_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label '{0}' is not one of the classes")]
    UnknownLabel(String),
    #[error("confusion matrix has no usable counts")]
    EmptyMatrix,
    #[error("cannot restrict: {0}")]
    ClassSetMismatch(String),
    #[error("duplicate run: {0}")]
    DuplicateRun(String),
    #[error("missing features for '{0}'")]
    MissingFeatures(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[&str]) -> Self {
        let n = classes.len();
        Self {
            classes: classes.iter().map(|c| c.to_string()).collect(),
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| EvalError::UnknownLabel(label.to_string()))
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }
}

/// Exact counting of `(true, predicted)` label pairs.
pub fn confusion_from_predictions<S: AsRef<str>>(pairs: &[(S, S)], classes: &[&str]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    for (t, p) in pairs {
        let (t, p) = (cm.class_index(t.as_ref())?, cm.class_index(p.as_ref())?);
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// One-vs-rest reduction for class `c`.
pub fn binary_reduce(cm: &ConfusionMatrix, c: usize) -> BinaryCounts {
    let tp = cm.counts[c][c];
    let fn_ = cm.row_sum(c) - tp;
    let fp = cm.col_sum(c) - tp;
    BinaryCounts {
        tp,
        tn: cm.total() - tp - fn_ - fp,
        fp,
        fn_,
    }
}

/// Classes with at least one true instance.
fn present(cm: &ConfusionMatrix) -> impl Iterator<Item = usize> + '_ {
    (0..cm.n_classes()).filter(|&c| cm.row_sum(c) > 0)
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

/// Macro-averaged one-vs-rest accuracy, in percent.
pub fn unweighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let accs: Vec<f64> = present(cm)
        .map(|c| {
            let b = binary_reduce(cm, c);
            (b.tp + b.tn) as f64 / total as f64
        })
        .collect();
    Ok(pct(accs.iter().sum::<f64>() / accs.len() as f64))
}

/// Macro-averaged one-vs-rest balanced accuracy, in percent. Classes whose
/// reduction has an empty positive or negative side are skipped.
pub fn weighted_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut values = Vec::new();
    for c in 0..cm.n_classes() {
        let b = binary_reduce(cm, c);
        if b.tp + b.fn_ == 0 || b.tn + b.fp == 0 {
            log::warn!("balanced accuracy: skipping class '{}' (degenerate reduction)", cm.classes[c]);
            continue;
        }
        let sens = b.tp as f64 / (b.tp + b.fn_) as f64;
        let spec = b.tn as f64 / (b.tn + b.fp) as f64;
        values.push(0.5 * (sens + spec));
    }
    if values.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    Ok(pct(values.iter().sum::<f64>() / values.len() as f64))
}

/// `(mean class recall, overall accuracy)` in percent.
pub fn conventional_metrics(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let recalls: Vec<f64> = present(cm)
        .map(|c| cm.counts[c][c] as f64 / cm.row_sum(c) as f64)
        .collect();
    Ok((
        pct(recalls.iter().sum::<f64>() / recalls.len() as f64),
        pct(cm.trace() as f64 / total as f64),
    ))
}

/// All four variants; each lies in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub ua: f64,
    pub wa: f64,
    pub mean_class_recall: f64,
    pub overall_accuracy: f64,
}

impl MetricSet {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let (mean_class_recall, overall_accuracy) = conventional_metrics(cm)?;
        Ok(Self {
            ua: unweighted_accuracy(cm)?,
            wa: weighted_accuracy(cm)?,
            mean_class_recall,
            overall_accuracy,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Ua => self.ua,
            Metric::Wa => self.wa,
            Metric::MeanClassRecall => self.mean_class_recall,
            Metric::OverallAccuracy => self.overall_accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ua,
    Wa,
    MeanClassRecall,
    OverallAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ua, Metric::Wa, Metric::MeanClassRecall, Metric::OverallAccuracy];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Ua => "UA",
            Metric::Wa => "WA",
            Metric::MeanClassRecall => "mean class recall",
            Metric::OverallAccuracy => "overall accuracy",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ua" => Ok(Metric::Ua),
            "wa" => Ok(Metric::Wa),
            "mean_class_recall" => Ok(Metric::MeanClassRecall),
            "overall_accuracy" => Ok(Metric::OverallAccuracy),
            _ => Err(format!(
                "unknown metric '{s}'; valid: ua, wa, mean_class_recall, overall_accuracy"
            )),
        }
    }
}

/// Mean and population standard deviation; `std` is absent for one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

pub fn aggregate_folds(values: &[f64]) -> Option<FoldAggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt());
    Some(FoldAggregate { mean, std, n })
}
