//! Cross-corpus result matrices: one column per trained model, one row per
//! test set, each cell the fold mean (population std) of every metric.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aggregate_folds, EvalError, FoldAggregate, Metric, MetricSet, Result};
use crate::corpus::natural_cmp;
use crate::util::{atomic_write, write_json_pretty};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One evaluated fold: model `model` (its training-set tag) on test set `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: String,
    pub test: String,
    pub fold: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Column order; unlisted models follow in natural order.
    pub model_order: Vec<String>,
    /// Row order; unlisted test sets follow in natural order.
    pub test_order: Vec<String>,
    /// Folds every cell should have; defaults to the largest count observed.
    pub expected_folds: Option<usize>,
    /// Recorded when evaluation limited the argmax to present classes.
    pub restricted_classes: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum CellStatus {
    Complete,
    /// Fewer folds than expected; statistics cover only the folds present.
    MissingFold { have: usize, expected: usize },
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub test: String,
    pub matched: bool,
    #[serde(flatten)]
    pub status: CellStatus,
    pub folds: Vec<usize>,
    pub stats: BTreeMap<Metric, FoldAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAverage {
    pub value: Option<f64>,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCorpusReport {
    pub schema_version: u32,
    pub models: Vec<String>,
    pub tests: Vec<String>,
    /// Row-major: `cells[t * models.len() + m]`.
    pub cells: Vec<Cell>,
    /// Per-model mean of the available cell means.
    pub model_average: BTreeMap<String, BTreeMap<Metric, Option<f64>>>,
    pub matched_average: BTreeMap<Metric, GlobalAverage>,
    pub mismatched_average: BTreeMap<Metric, GlobalAverage>,
    pub restricted_classes: bool,
    pub legend: Vec<String>,
}

fn order(seen: BTreeSet<&str>, preferred: &[String]) -> Vec<String> {
    let mut out: Vec<String> = preferred.iter().filter(|p| seen.contains(p.as_str())).cloned().collect();
    let mut rest: Vec<&str> = seen.into_iter().filter(|s| !preferred.iter().any(|p| p == s)).collect();
    rest.sort_by(|a, b| natural_cmp(a, b));
    out.extend(rest.into_iter().map(String::from));
    out
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Assemble the grid. The result depends only on the set of runs, never on
/// their order. Duplicate `(model, test, fold)` entries are rejected.
pub fn build_cross_matrix(runs: &[RunResult], options: &ReportOptions) -> Result<CrossCorpusReport> {
    let mut grouped: BTreeMap<(&str, &str), BTreeMap<usize, &MetricSet>> = BTreeMap::new();
    for r in runs {
        if grouped
            .entry((r.model.as_str(), r.test.as_str()))
            .or_default()
            .insert(r.fold, &r.metrics)
            .is_some()
        {
            return Err(EvalError::DuplicateRun(format!("{} on {} fold {}", r.model, r.test, r.fold)));
        }
    }
    let models = order(runs.iter().map(|r| r.model.as_str()).collect(), &options.model_order);
    let tests = order(runs.iter().map(|r| r.test.as_str()).collect(), &options.test_order);
    let expected = options
        .expected_folds
        .unwrap_or_else(|| grouped.values().map(BTreeMap::len).max().unwrap_or(0));

    let mut cells = Vec::with_capacity(models.len() * tests.len());
    for t in &tests {
        for m in &models {
            let folds = grouped.get(&(m.as_str(), t.as_str()));
            let stats: BTreeMap<Metric, FoldAggregate> = folds
                .map(|f| {
                    Metric::ALL
                        .iter()
                        .filter_map(|&k| {
                            let v: Vec<f64> = f.values().map(|ms| ms.get(k)).collect();
                            aggregate_folds(&v).map(|a| (k, a))
                        })
                        .collect()
                })
                .unwrap_or_default();
            let have = folds.map_or(0, BTreeMap::len);
            let status = match have {
                0 => CellStatus::Missing,
                h if h < expected => CellStatus::MissingFold { have: h, expected },
                _ => CellStatus::Complete,
            };
            cells.push(Cell {
                model: m.clone(),
                test: t.clone(),
                matched: m == t,
                status,
                folds: folds.map(|f| f.keys().copied().collect()).unwrap_or_default(),
                stats,
            });
        }
    }

    let model_average = models
        .iter()
        .map(|m| {
            let per_metric = Metric::ALL
                .iter()
                .map(|&k| {
                    let v: Vec<f64> = cells
                        .iter()
                        .filter(|c| &c.model == m)
                        .filter_map(|c| c.stats.get(&k).map(|a| a.mean))
                        .collect();
                    (k, mean(&v))
                })
                .collect();
            (m.clone(), per_metric)
        })
        .collect();

    // global averages only use models trained on a single test-set corpus
    let single: BTreeSet<&str> = models.iter().filter(|m| tests.contains(m)).map(String::as_str).collect();
    let global = |want_matched: bool| -> BTreeMap<Metric, GlobalAverage> {
        Metric::ALL
            .iter()
            .map(|&k| {
                let v: Vec<f64> = cells
                    .iter()
                    .filter(|c| c.matched == want_matched && single.contains(c.model.as_str()))
                    .filter_map(|c| c.stats.get(&k).map(|a| a.mean))
                    .collect();
                (k, GlobalAverage { value: mean(&v), n_cells: v.len() })
            })
            .collect()
    };

    Ok(CrossCorpusReport {
        schema_version: REPORT_SCHEMA_VERSION,
        matched_average: global(true),
        mismatched_average: global(false),
        models,
        tests,
        cells,
        model_average,
        restricted_classes: options.restricted_classes,
        legend: legend(options.restricted_classes),
    })
}

fn legend(restricted: bool) -> Vec<String> {
    let mut l = vec![
        "UA: one-vs-rest accuracy (tp+tn)/(tp+tn+fp+fn), macro-averaged over classes".to_string(),
        "WA: one-vs-rest balanced accuracy (tp/(tp+fn) + tn/(tn+fp))/2, macro-averaged over classes".to_string(),
        "mean class recall: average of per-class recall".to_string(),
        "overall accuracy: correct / total".to_string(),
        "cells: mean (std) over folds; std is the population standard deviation, omitted for a single fold".to_string(),
        "*x*: matched condition (model trained on the test corpus)".to_string(),
        "[h/n]: only h of n folds available; n/a: no runs".to_string(),
    ];
    l.push(if restricted {
        "argmax restricted to classes present in each test set".to_string()
    } else {
        "argmax over all model classes".to_string()
    });
    l
}

fn fmt_cell(c: &Cell, metric: Metric) -> String {
    let Some(a) = c.stats.get(&metric) else {
        return "n/a".into();
    };
    let mut s = match a.std {
        Some(sd) => format!("{:.1} ({:.1})", a.mean, sd),
        None => format!("{:.1}", a.mean),
    };
    if c.matched {
        s = format!("*{s}*");
    }
    if let CellStatus::MissingFold { have, expected } = c.status {
        write!(s, " [{have}/{expected}]").unwrap();
    }
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.1}"))
}

impl CrossCorpusReport {
    pub fn cell(&self, model: &str, test: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.model == model && c.test == test)
    }

    /// Plain-text table for one metric: header of models, one line per test
    /// set, the per-model average row, then the global averages.
    pub fn render_table(&self, metric: Metric) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["Test \\ Train".to_string()];
        header.extend(self.models.iter().cloned());
        rows.push(header);
        for (ti, t) in self.tests.iter().enumerate() {
            let mut row = vec![t.clone()];
            let n = self.models.len();
            row.extend(self.cells[ti * n..(ti + 1) * n].iter().map(|c| fmt_cell(c, metric)));
            rows.push(row);
        }
        let mut avg = vec!["Avg".to_string()];
        avg.extend(self.models.iter().map(|m| fmt_opt(self.model_average[m][&metric])));
        rows.push(avg);

        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let line = |r: &[String]| -> String {
            let cols: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, &w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            format!("| {} |", cols.join(" | "))
        };
        let rule = format!(
            "|{}|",
            widths.iter().map(|&w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
        );
        let mut out = String::new();
        writeln!(out, "{}", metric.label()).unwrap();
        writeln!(out, "{}", line(&rows[0])).unwrap();
        writeln!(out, "{rule}").unwrap();
        for r in &rows[1..rows.len() - 1] {
            writeln!(out, "{}", line(r)).unwrap();
        }
        writeln!(out, "{rule}").unwrap();
        writeln!(out, "{}", line(&rows[rows.len() - 1])).unwrap();
        let m = &self.matched_average[&metric];
        let mm = &self.mismatched_average[&metric];
        writeln!(out, "matched average: {} over {} conditions", fmt_opt(m.value), m.n_cells).unwrap();
        writeln!(out, "mismatched average: {} over {} conditions", fmt_opt(mm.value), mm.n_cells).unwrap();
        out
    }

    /// Tables for all four metrics followed by the legend.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for m in Metric::ALL {
            out.push_str(&self.render_table(m));
            out.push('\n');
        }
        out.push_str("Legend\n");
        for l in &self.legend {
            writeln!(out, "  {l}").unwrap();
        }
        out
    }

    /// Long format: one line per (cell, metric).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,test,metric,mean,std,n_folds,matched,status\n");
        for c in &self.cells {
            let status = match c.status {
                CellStatus::Complete => "complete",
                CellStatus::MissingFold { .. } => "missing_fold",
                CellStatus::Missing => "missing",
            };
            for m in Metric::ALL {
                let (mean, std, n) = c.stats.get(&m).map_or((String::new(), String::new(), 0), |a| {
                    (format!("{:.4}", a.mean), a.std.map_or(String::new(), |s| format!("{s:.4}")), a.n)
                });
                let metric = serde_json::to_value(m).unwrap();
                writeln!(
                    out,
                    "{},{},{},{mean},{std},{n},{},{status}",
                    c.model,
                    c.test,
                    metric.as_str().unwrap(),
                    c.matched
                )
                .unwrap();
            }
        }
        out
    }

    /// Write `report.json`, `report.csv` and `report.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_json_pretty(dir.join("report.json"), self)?;
        atomic_write(dir.join("report.csv"), self.to_csv().as_bytes())?;
        atomic_write(dir.join("report.txt"), self.render_text().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: f64) -> MetricSet {
        MetricSet {
            ua: v,
            wa: v,
            mean_class_recall: v,
            overall_accuracy: v,
        }
    }

    fn grid(tests: &[&str], models: &[&str], folds: usize) -> Vec<RunResult> {
        let mut runs = Vec::new();
        for m in models {
            for t in tests {
                for f in 0..folds {
                    let base = if m == t { 90.0 } else { 65.0 };
                    runs.push(RunResult {
                        model: m.to_string(),
                        test: t.to_string(),
                        fold: f,
                        metrics: ms(base + if f % 2 == 0 { 1.0 } else { -1.0 } * (folds > 1 && f < 4) as u8 as f64),
                    });
                }
            }
        }
        runs
    }

    #[test]
    fn matched_and_mismatched_averages() {
        let t = ["A", "B", "C"];
        let mut models = t.to_vec();
        models.push("All");
        let r = build_cross_matrix(&grid(&t, &models, 4), &ReportOptions::default()).unwrap();
        assert_eq!(r.models, vec!["A", "All", "B", "C"]);
        assert_eq!(r.matched_average[&Metric::Ua], GlobalAverage { value: Some(90.0), n_cells: 3 });
        assert_eq!(r.mismatched_average[&Metric::Ua], GlobalAverage { value: Some(65.0), n_cells: 6 });
        let c = r.cell("B", "B").unwrap();
        assert!(c.matched && c.status == CellStatus::Complete);
        assert_eq!(c.stats[&Metric::Wa].std, Some(1.0));
        assert!(!r.cell("All", "B").unwrap().matched);
    }

    #[test]
    fn order_independent_and_flags_gaps() {
        let t = ["x1", "x2"];
        let mut runs = grid(&t, &t, 3);
        runs.remove(4); // x1 model on x2, fold 1
        let a = build_cross_matrix(&runs, &ReportOptions::default()).unwrap();
        runs.reverse();
        let b = build_cross_matrix(&runs, &ReportOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.render_text(), b.render_text());
        assert_eq!(
            a.cell("x1", "x2").unwrap().status,
            CellStatus::MissingFold { have: 2, expected: 3 }
        );
        let opts = ReportOptions {
            model_order: vec!["x2".into()],
            ..Default::default()
        };
        let c = build_cross_matrix(&runs, &opts).unwrap();
        assert_eq!(c.models, vec!["x2", "x1"]);
        runs.push(runs[0].clone());
        assert!(matches!(build_cross_matrix(&runs, &opts), Err(EvalError::DuplicateRun(_))));
    }

    #[test]
    fn single_fold_and_missing_cells_render() {
        let runs = vec![RunResult {
            model: "A".into(),
            test: "A".into(),
            fold: 0,
            metrics: ms(80.0),
        }, RunResult {
            model: "B".into(),
            test: "B".into(),
            fold: 0,
            metrics: ms(70.0),
        }];
        let r = build_cross_matrix(&runs, &ReportOptions::default()).unwrap();
        assert_eq!(r.cell("A", "B").unwrap().status, CellStatus::Missing);
        let table = r.render_table(Metric::Ua);
        assert!(table.contains("*80.0*"), "{table}");
        assert!(table.contains("n/a"));
        assert!(!table.contains('('));
        let csv = r.to_csv();
        assert!(csv.lines().any(|l| l == "A,A,ua,80.0000,,1,true,complete"), "{csv}");
    }
}
