//! Versioned binary checkpoints. Layout, all integers little-endian:
//!
//! ```text
//! "SERCKPT\0" | u32 version | str arch tag | str config json | 32 B config digest
//! | u64 epoch | u32 n_params | { str name | u32 ndim | u32 dims.. | f32 cells.. }
//! | u32 n_bn | { str name | u32 len | f32 mean.. | f32 var.. }
//! ```
//! where `str` is a `u32` byte length followed by UTF-8 bytes.

use std::io::{Cursor, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::arch::{Architecture, ModelGraph};
use super::norm::BnState;
use super::tensor::{Scalar, Tensor};
use super::{ModelError, Result};
use crate::util::atomic_write;

const MAGIC: &[u8; 8] = b"SERCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_cells<T: Scalar>(out: &mut Vec<u8>, cells: &[T]) {
    for c in cells {
        out.extend_from_slice(&c.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
}

fn config_digest(json: &str) -> [u8; 32] {
    Sha256::digest(json.as_bytes()).into()
}

pub fn encode_checkpoint<T: Scalar>(model: &ModelGraph<T>, epoch: u64) -> Vec<u8> {
    let json = serde_json::to_string(model.arch()).expect("config serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, model.arch().tag());
    put_str(&mut out, &json);
    out.extend_from_slice(&config_digest(&json));
    out.extend_from_slice(&epoch.to_le_bytes());
    put_u32(&mut out, model.params.len() as u32);
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut out, d as u32);
        }
        put_cells(&mut out, &t.data);
    }
    put_u32(&mut out, model.bn.len() as u32);
    for (name, s) in &model.bn {
        put_str(&mut out, name);
        put_u32(&mut out, s.mean.len() as u32);
        put_cells(&mut out, &s.mean);
        put_cells(&mut out, &s.var);
    }
    out
}

pub fn save_checkpoint<T: Scalar>(model: &ModelGraph<T>, epoch: u64, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &encode_checkpoint(model, epoch))?;
    Ok(())
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| ModelError::Checkpoint("truncated file".into()))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.usize()?;
        let mut b = vec![0u8; n];
        self.0
            .read_exact(&mut b)
            .map_err(|_| ModelError::Checkpoint("truncated string".into()))?;
        String::from_utf8(b).map_err(|_| ModelError::Checkpoint("invalid UTF-8".into()))
    }

    fn cells<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n)
            .map(|_| Ok(T::lit(f32::from_le_bytes(self.bytes()?) as f64)))
            .collect()
    }
}

/// Decoded checkpoint contents.
pub struct Checkpoint<T> {
    pub arch: Architecture,
    pub epoch: u64,
    pub params: Vec<(String, Tensor<T>)>,
    pub bn: Vec<(String, BnState<T>)>,
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader(Cursor::new(bytes));
    if &r.bytes::<8>()? != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = r.string()?;
    let json = r.string()?;
    let digest = r.bytes::<32>()?;
    if digest != config_digest(&json) {
        return Err(ModelError::Checkpoint("config digest does not match stored config".into()));
    }
    let arch: Architecture = serde_json::from_str(&json)
        .map_err(|e| ModelError::Checkpoint(format!("bad config: {e}")))?;
    if arch.tag() != tag {
        return Err(ModelError::Checkpoint(format!("tag '{tag}' disagrees with config")));
    }
    let epoch = u64::from_le_bytes(r.bytes()?);
    let n = r.usize()?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name = r.string()?;
        let ndim = r.usize()?;
        let shape: Vec<usize> = (0..ndim).map(|_| r.usize()).collect::<Result<_>>()?;
        let cells = r.cells(shape.iter().product())?;
        params.push((name, Tensor::new(&shape, cells)));
    }
    let n_bn = r.usize()?;
    let mut bn = Vec::with_capacity(n_bn);
    for _ in 0..n_bn {
        let name = r.string()?;
        let len = r.usize()?;
        let mean = r.cells(len)?;
        let var = r.cells(len)?;
        bn.push((name, BnState { mean, var }));
    }
    Ok(Checkpoint {
        arch,
        epoch,
        params,
        bn,
    })
}

impl<T: Scalar> ModelGraph<T> {
    /// Overwrite parameters and statistics from `ckpt`; the architecture
    /// must match this model's configuration exactly.
    pub fn restore(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        if ckpt.arch.digest() != self.arch().digest() {
            return Err(ModelError::ConfigMismatch);
        }
        if ckpt.params.len() != self.params.len() || ckpt.bn.len() != self.bn.len() {
            return Err(ModelError::Checkpoint("parameter set differs".into()));
        }
        for ((name, t), (own_name, own)) in ckpt
            .params
            .iter()
            .zip(self.params.names.iter().zip(self.params.tensors.iter_mut()))
        {
            if name != own_name || t.shape != own.shape {
                return Err(ModelError::Checkpoint(format!("parameter '{name}' differs")));
            }
            own.data.clone_from(&t.data);
        }
        for ((name, s), (own_name, own)) in ckpt.bn.iter().zip(self.bn.iter_mut()) {
            if name != own_name || s.mean.len() != own.mean.len() {
                return Err(ModelError::Checkpoint(format!("batch-norm '{name}' differs")));
            }
            *own = s.clone();
        }
        Ok(())
    }

    /// Load into an existing model; returns the stored epoch.
    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<u64> {
        let ckpt = decode_checkpoint(&std::fs::read(path)?)?;
        self.restore(&ckpt)?;
        Ok(ckpt.epoch)
    }
}

/// Rebuild a model from the configuration stored in the file.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelGraph<T>, u64)> {
    let ckpt = decode_checkpoint(&std::fs::read(path)?)?;
    let mut model = ModelGraph::build(&ckpt.arch, 0)?;
    model.restore(&ckpt)?;
    Ok((model, ckpt.epoch))
}
