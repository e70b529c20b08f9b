use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, EvalError, MetricSet, Result};
use crate::corpus::{CorpusManifest, Emotion};
use crate::frontend::FeatureSet;
use crate::model::{ModelGraph, Tensor};
use crate::util::atomic_write;

/// Anything that maps a `[batch, frames, bands]` tensor to per-class
/// probabilities `[batch, n_classes]`, with class `k` = `Emotion::from_index(k)`.
pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn predict_proba(&mut self, features: Tensor<f32>) -> crate::model::Result<Tensor<f32>>;
}

impl Classifier for ModelGraph<f32> {
    fn n_classes(&self) -> usize {
        self.arch().n_classes()
    }

    fn predict_proba(&mut self, features: Tensor<f32>) -> crate::model::Result<Tensor<f32>> {
        ModelGraph::predict_proba(self, features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: Emotion,
    pub predicted: Emotion,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
    pub predictions: Vec<Prediction>,
    /// True when the argmax was limited to classes present in the test set.
    pub restricted: bool,
}

impl Evaluation {
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("id,true,predicted");
        for c in &self.confusion.classes {
            write!(out, ",p_{c}").unwrap();
        }
        out.push('\n');
        for p in &self.predictions {
            write!(out, "{},{},{}", p.id, p.truth, p.predicted).unwrap();
            for s in &p.scores {
                write!(out, ",{s:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        atomic_write(dir.join("predictions.csv"), self.predictions_csv().as_bytes())?;
        let summary = serde_json::json!({
            "confusion": self.confusion,
            "metrics": self.metrics,
            "restricted_classes": self.restricted,
        });
        crate::util::write_json_pretty(dir.join("evaluation.json"), &summary)?;
        Ok(())
    }
}

/// Eval-mode forward over the whole test manifest in chunks of `batch`.
///
/// Without `restrict_classes` the argmax runs over every model class, so a
/// prediction of a class the test set lacks counts as an error. With it, the
/// argmax is limited to classes that occur in the test labels.
pub fn evaluate_model<C: Classifier + ?Sized>(
    model: &mut C,
    manifest: &CorpusManifest,
    features: &FeatureSet,
    restrict_classes: bool,
    batch: usize,
) -> Result<Evaluation> {
    let n_classes = model.n_classes();
    let classes: Vec<Emotion> = (0..n_classes).filter_map(Emotion::from_index).collect();
    if classes.len() != n_classes {
        return Err(EvalError::ClassSetMismatch(format!("model has {n_classes} classes")));
    }
    let mut truths = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        let e = r
            .emotion
            .ok_or_else(|| EvalError::UnknownLabel(format!("{} (unlabeled)", r.id)))?;
        if e.index() >= n_classes {
            return Err(EvalError::ClassSetMismatch(format!(
                "test label '{e}' is outside the model's {n_classes} classes"
            )));
        }
        truths.push(e);
    }
    let allowed: Vec<bool> = if restrict_classes {
        let mut present = vec![false; n_classes];
        truths.iter().for_each(|e| present[e.index()] = true);
        if !present.iter().any(|&p| p) {
            return Err(EvalError::ClassSetMismatch("test set has no labeled records".into()));
        }
        present
    } else {
        vec![true; n_classes]
    };

    let names: Vec<&str> = classes.iter().map(|c| c.as_str()).collect();
    let mut confusion = ConfusionMatrix::new(&names);
    let mut predictions = Vec::with_capacity(truths.len());
    let ids: Vec<&str> = manifest.ids().collect();
    for (chunk_ids, chunk_truths) in ids.chunks(batch.max(1)).zip(truths.chunks(batch.max(1))) {
        let x = features.batch(chunk_ids).map_err(EvalError::MissingFeatures)?;
        let proba = model.predict_proba(x)?;
        for (row, (&id, &truth)) in chunk_ids.iter().zip(chunk_truths).enumerate() {
            let scores: Vec<f64> = proba.data[row * n_classes..(row + 1) * n_classes]
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            // first maximum wins, so ties resolve deterministically
            let best = (0..n_classes)
                .filter(|&k| allowed[k])
                .fold(None, |acc: Option<usize>, k| match acc {
                    Some(b) if scores[b] >= scores[k] => Some(b),
                    _ => Some(k),
                })
                .expect("at least one allowed class");
            confusion.add(truth.index(), best);
            predictions.push(Prediction {
                id: id.to_string(),
                truth,
                predicted: classes[best],
                scores,
            });
        }
    }
    Ok(Evaluation {
        metrics: MetricSet::from_confusion(&confusion)?,
        confusion,
        predictions,
        restricted: restrict_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_record;
    use crate::frontend::FeatureMatrix;

    /// Linear scorer on the first feature cell: class 0 for positive input,
    /// class 1 for negative; the remaining classes get fixed scores.
    struct Sign {
        n: usize,
        rest: f32,
    }

    impl Classifier for Sign {
        fn n_classes(&self) -> usize {
            self.n
        }

        fn predict_proba(&mut self, x: Tensor<f32>) -> crate::model::Result<Tensor<f32>> {
            let per = x.shape[1] * x.shape[2];
            let mut out = Vec::new();
            for b in 0..x.shape[0] {
                let v = x.data[b * per];
                out.push(v);
                out.push(-v);
                out.extend(std::iter::repeat_n(self.rest, self.n - 2));
            }
            Ok(Tensor::new(&[x.shape[0], self.n], out))
        }
    }

    fn fixture(labels: &[(Emotion, f64)]) -> (CorpusManifest, FeatureSet) {
        let mut fs = FeatureSet::new();
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &(e, v))| {
                let id = format!("u{i:02}");
                fs.insert(id.clone(), FeatureMatrix::new(vec![v; 6], 3, 2));
                test_record(&id, "s1", Some(e))
            })
            .collect();
        (CorpusManifest::new("t", records).unwrap(), fs)
    }

    #[test]
    fn separable_linear_model_scores_perfectly() {
        let (m, fs) = fixture(&[
            (Emotion::Angry, 1.0),
            (Emotion::Happy, -2.0),
            (Emotion::Angry, 0.5),
            (Emotion::Happy, -0.1),
            (Emotion::Angry, 3.0),
        ]);
        let ev = evaluate_model(&mut Sign { n: 2, rest: 0.0 }, &m, &fs, false, 2).unwrap();
        assert_eq!(ev.metrics.ua, 100.0);
        assert_eq!(ev.metrics.wa, 100.0);
        assert_eq!(ev.confusion.total(), 5);
        let again = evaluate_model(&mut Sign { n: 2, rest: 0.0 }, &m, &fs, false, 3).unwrap();
        assert_eq!(ev.predictions, again.predictions);
        assert!(ev.predictions_csv().starts_with("id,true,predicted,p_angry,p_happy\nu00,angry,angry,"));
    }

    #[test]
    fn absent_class_predictions_count_unless_restricted() {
        // sad and neutral always score 0.5, beating the weak inputs; ties go to sad
        let (m, fs) = fixture(&[
            (Emotion::Angry, 1.0),
            (Emotion::Happy, -1.0),
            (Emotion::Angry, 0.2),
            (Emotion::Happy, -0.2),
        ]);
        let mut model = Sign { n: 4, rest: 0.5 };
        let full = evaluate_model(&mut model, &m, &fs, false, 8).unwrap();
        assert_eq!(full.confusion.counts[0][2] + full.confusion.counts[1][2], 2);
        assert_eq!(full.metrics.overall_accuracy, 50.0);
        assert!(!full.restricted);
        let restricted = evaluate_model(&mut model, &m, &fs, true, 8).unwrap();
        assert_eq!(restricted.metrics.overall_accuracy, 100.0);
        assert!(restricted.restricted);
    }

    #[test]
    fn label_outside_model_classes() {
        let (m, fs) = fixture(&[(Emotion::Neutral, 1.0)]);
        assert!(matches!(
            evaluate_model(&mut Sign { n: 2, rest: 0.0 }, &m, &fs, true, 1),
            Err(EvalError::ClassSetMismatch(_))
        ));
        let (m, _) = fixture(&[(Emotion::Angry, 1.0)]);
        assert!(matches!(
            evaluate_model(&mut Sign { n: 2, rest: 0.0 }, &m, &FeatureSet::new(), false, 1),
            Err(EvalError::MissingFeatures(_))
        ));
    }
}
