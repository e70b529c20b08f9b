//! Operator surface: subcommands that chain the modules into experiments.
//! Every command validates its inputs before writing anything, writes
//! canonical outputs atomically, and leaves a self-describing run directory.

mod commands;
mod config;

pub use commands::{
    cmd_augment, cmd_eval, cmd_pipeline, cmd_prepare, cmd_report, cmd_synth, cmd_train, EvalOptions, PipelineConfig,
    PrepareOptions,
};
pub use config::{default_out_root, CheckpointChoice, CorpusInput, ExperimentConfig, ResolvedConfig, OUT_ENV};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: configuration, arguments, manifests, specs.
    Validation,
    /// Failure while doing valid work: I/O, numerical divergence.
    Runtime,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    /// 2 for validation failures, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 2,
            ErrorKind::Runtime => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn classify(validation: bool, e: impl std::fmt::Display) -> CliError {
    if validation {
        CliError::validation(e.to_string())
    } else {
        CliError::runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<crate::corpus::CorpusError> for CliError {
    fn from(e: crate::corpus::CorpusError) -> Self {
        use crate::corpus::CorpusError::*;
        classify(!matches!(e, Io(_)), e)
    }
}

impl From<crate::frontend::FrontendError> for CliError {
    fn from(e: crate::frontend::FrontendError) -> Self {
        use crate::frontend::FrontendError::*;
        classify(matches!(e, BadConfig(_) | SampleRateMismatch { .. }), e)
    }
}

impl From<crate::augment::AugmentError> for CliError {
    fn from(e: crate::augment::AugmentError) -> Self {
        use crate::augment::AugmentError::*;
        classify(!matches!(e, Io(_)), e)
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        use crate::model::ModelError::*;
        classify(matches!(e, BadConfig(_) | ConfigMismatch | Checkpoint(_)), e)
    }
}

impl From<crate::train::TrainError> for CliError {
    fn from(e: crate::train::TrainError) -> Self {
        use crate::train::TrainError::*;
        let validation = matches!(
            e,
            BadConfig(_) | TooFewPerClass(_) | EmptyTrainSet | TestLeakage(_) | Unlabeled(_) | UnknownProfile(_) | Resume(_)
        );
        classify(validation, e)
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        use crate::eval::EvalError::*;
        classify(!matches!(e, Io(_) | Model(_)), e)
    }
}

impl From<crate::synth::SynthError> for CliError {
    fn from(e: crate::synth::SynthError) -> Self {
        use crate::synth::SynthError::*;
        classify(matches!(e, InvalidSpec { .. } | Json(_)), e)
    }
}

impl From<glob::PatternError> for CliError {
    fn from(e: glob::PatternError) -> Self {
        CliError::validation(e.to_string())
    }
}

/// Error unless `path` exists.
pub(crate) fn require_file(path: &std::path::Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} not found: {}", path.display())))
    }
}
