//! Dense tensors, a reverse-mode tape with fused layer operations, and the
//! two attention-based emotion classifiers built on it.

mod arch;
mod attention;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod graph;
mod norm;
mod recurrent;
mod tensor;

pub use arch::{
    build_blstmattsim, build_cnnrnnatt, Architecture, BlstmAttSimConfig, CnnRnnAttConfig,
    ConvSpec, Forward, ModelGraph, ParamStore,
};
pub use attention::AttentionParams;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use graph::{Graph, Var};
pub use norm::{BnState, BN_EPS, BN_MOMENTUM};
pub use recurrent::LstmParams;
pub use tensor::{gemm, Scalar, Tensor};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 rows in train mode, got {0}")]
    BatchTooSmall(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    BadRate(f64),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for a different model configuration")]
    ConfigMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
