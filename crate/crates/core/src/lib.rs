//! Cross-corpus speech emotion recognition toolkit.
//!
//! The crate covers the full experiment pipeline: WAV ingest and signal
//! augmentation ([`audio`], [`augment`]), log-Mel filterbank features
//! ([`frontend`]), corpus manifests and fold construction ([`corpus`]), a
//! small reverse-mode differentiation core with the CNN-RNN-attention and
//! BLSTM-attention classifiers ([`model`]), Adam training with plateau
//! scheduling ([`train`]), metrics and cross-corpus reports ([`eval`]),
//! synthetic corpora ([`synth`]) and the command layer ([`cli`]).

pub mod audio;
pub mod util;
pub mod frontend;
pub mod corpus;
pub mod augment;
pub mod model;
pub mod eval;
pub mod train;
pub mod synth;
pub mod cli;
