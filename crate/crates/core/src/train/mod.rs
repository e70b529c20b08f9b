//! Adam training with plateau learning-rate reduction, validation carving,
//! checkpointing and deterministic batching.

mod optim;
mod split;
mod trainer;

pub use optim::{adam_step, AdamState, PlateauState};
pub use split::carve_validation;
pub use trainer::{train_model, EpochRecord, TrainOutcome, TrainRun, EXECUTION_MODE};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::FbankConfig;
use crate::model::{Architecture, CnnRnnAttConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class '{0}' has too few utterances to carve a validation split")]
    TooFewPerClass(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}; state written to {dump:?}")]
    DivergedLoss {
        epoch: usize,
        batch: usize,
        dump: Option<PathBuf>,
    },
    #[error("utterance '{0}' is on both the training and the test side")]
    TestLeakage(String),
    #[error("utterance '{0}' has no emotion label")]
    Unlabeled(String),
    #[error("missing features for '{0}'")]
    MissingFeatures(String),
    #[error("unknown profile '{0}'; valid: paper-default, desk-scale")]
    UnknownProfile(String),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Improvement must exceed the best value by more than this.
    pub plateau_min_delta: f64,
    pub min_lr: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-4,
            batch_size: 186,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            plateau_patience: 4,
            plateau_factor: 0.8,
            plateau_min_delta: 1e-6,
            min_lr: 1e-7,
            validation_fraction: 0.1,
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::BadConfig(m.to_string()));
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience < 1 {
            return bad("plateau_patience must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return bad("validation_fraction must lie in (0, 0.5)");
        }
        if !(self.learning_rate > 0.0 && self.min_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }
}

/// Everything needed to reproduce a run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub fbank: FbankConfig,
    pub model: Architecture,
    pub train: TrainConfig,
}

impl Profile {
    /// Full-size model, 7 s inputs and the published optimizer settings.
    pub fn paper_default() -> Self {
        Self {
            name: "paper-default".into(),
            fbank: FbankConfig::default(),
            model: Architecture::CnnRnnAtt(CnnRnnAttConfig::default()),
            train: TrainConfig::default(),
        }
    }

    /// Small model, 2 s inputs and a faster optimizer for CPU-only runs.
    pub fn desk_scale() -> Self {
        Self {
            name: "desk-scale".into(),
            fbank: FbankConfig {
                max_seconds: 2.0,
                ..FbankConfig::default()
            },
            model: Architecture::CnnRnnAtt(CnnRnnAttConfig::desk_scale()),
            train: TrainConfig {
                epochs: 40,
                learning_rate: 2e-3,
                batch_size: 16,
                ..TrainConfig::default()
            },
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "paper-default" => Ok(Self::paper_default()),
            "desk-scale" => Ok(Self::desk_scale()),
            other => Err(TrainError::UnknownProfile(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        if self.model.n_bands() != self.fbank.n_bands {
            return Err(TrainError::BadConfig(format!(
                "model expects {} bands, front-end produces {}",
                self.model.n_bands(),
                self.fbank.n_bands
            )));
        }
        Ok(())
    }
}
