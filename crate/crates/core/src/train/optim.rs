use std::io::{Cursor, Read};

use serde::{Deserialize, Serialize};

use super::{Result, TrainConfig, TrainError};
use crate::model::Tensor;

const ADAM_MAGIC: &[u8; 8] = b"SERADAM\0";

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::from(&ADAM_MAGIC[..]);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u32).to_le_bytes());
        for (m, v) in self.m.iter().zip(&self.v) {
            out.extend_from_slice(&(m.len() as u32).to_le_bytes());
            for x in m.iter().chain(v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || TrainError::Resume("optimizer state is truncated or corrupt".into());
        let mut r = Cursor::new(bytes);
        let mut take = |n: usize| -> Result<Vec<u8>> {
            let mut b = vec![0u8; n];
            r.read_exact(&mut b).map_err(|_| bad())?;
            Ok(b)
        };
        if take(8)? != ADAM_MAGIC {
            return Err(bad());
        }
        let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let cells: Vec<f32> = take(8 * len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            m.push(cells[..len].to_vec());
            v.push(cells[len..].to_vec());
        }
        Ok(Self { step, m, v })
    }
}

/// One bias-corrected Adam update of every parameter tensor.
pub fn adam_step(
    params: &mut [Tensor<f32>],
    grads: &[Vec<f32>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(TrainError::ShapeMismatch(format!("parameter {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = (1.0 - cfg.beta1.powi(t)) as f32;
    let c2 = (1.0 - cfg.beta2.powi(t)) as f32;
    let (lr, eps) = (lr as f32, cfg.adam_eps as f32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *w -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Reduce-on-plateau for a higher-is-better validation metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub reductions: usize,
}

impl PlateauState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            best: None,
            bad_epochs: 0,
            reductions: 0,
        }
    }

    /// Returns true when this update reduced the learning rate. The counter
    /// resets on improvement and after every reduction; lr never drops below
    /// `min_lr`.
    pub fn update(&mut self, metric: f64, cfg: &TrainConfig) -> bool {
        if self.best.is_none_or(|b| metric > b + cfg.plateau_min_delta) {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < cfg.plateau_patience {
            return false;
        }
        self.bad_epochs = 0;
        let next = (self.lr * cfg.plateau_factor).max(cfg.min_lr);
        let reduced = next < self.lr;
        self.lr = next;
        self.reductions += usize::from(reduced);
        reduced
    }
}
