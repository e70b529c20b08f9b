//! The two emotion classifiers and their parameter bookkeeping.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionParams;
use super::graph::{Graph, Var};
use super::norm::BnState;
use super::recurrent::LstmParams;
use super::tensor::{Scalar, Tensor};
use super::{Mode, ModelError, Result};
use crate::util::{sha256_hex, stable_hash64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    /// Max-pool window applied after the activation.
    pub pool: Option<(usize, usize)>,
}

impl ConvSpec {
    fn new(channels: usize, pool: bool) -> Self {
        Self {
            channels,
            kernel: (3, 3),
            stride: (1, 1),
            pool: pool.then_some((2, 2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnRnnAttConfig {
    pub n_bands: usize,
    pub conv_layers: Vec<ConvSpec>,
    /// Batch norm after each convolution as well as after each FC layer.
    pub conv_batchnorm: bool,
    pub blstm_hidden: usize,
    pub fc_sizes: Vec<usize>,
    pub dropout: f64,
    pub attention_size: usize,
    pub n_classes: usize,
}

impl Default for CnnRnnAttConfig {
    fn default() -> Self {
        Self {
            n_bands: 23,
            conv_layers: [32, 32, 64, 64, 128, 128]
                .iter()
                .enumerate()
                .map(|(i, &c)| ConvSpec::new(c, i % 2 == 1))
                .collect(),
            conv_batchnorm: false,
            blstm_hidden: 512,
            fc_sizes: vec![512, 512, 256, 128],
            dropout: 0.2,
            attention_size: 128,
            n_classes: 4,
        }
    }
}

impl CnnRnnAttConfig {
    /// Same topology at a size that trains on one CPU core in minutes.
    pub fn desk_scale() -> Self {
        Self {
            conv_layers: vec![ConvSpec::new(8, true), ConvSpec::new(8, true)],
            blstm_hidden: 32,
            fc_sizes: vec![32, 16],
            attention_size: 16,
            dropout: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.to_string()));
        if self.n_bands == 0 || self.n_classes < 2 {
            return bad("need at least one band and two classes");
        }
        if self.conv_layers.iter().any(|c| {
            c.channels == 0
                || c.kernel.0 == 0
                || c.kernel.1 == 0
                || c.stride.0 == 0
                || c.stride.1 == 0
                || c.pool.is_some_and(|p| p.0 == 0 || p.1 == 0)
        }) {
            return bad("conv layers need nonzero channels, kernel, stride and pool");
        }
        if self.blstm_hidden == 0 || self.attention_size == 0 || self.fc_sizes.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.conv_band_width() == 0 {
            return bad("pooling leaves no band axis");
        }
        Ok(())
    }

    /// Band-axis width after the conv stack.
    fn conv_band_width(&self) -> usize {
        self.conv_layers.iter().fold(self.n_bands, |w, c| {
            let w = w.div_ceil(c.stride.1);
            c.pool.map_or(w, |p| w / p.1)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlstmAttSimConfig {
    pub n_bands: usize,
    pub blstm_layers: usize,
    pub hidden: usize,
    pub attention_size: usize,
    pub n_classes: usize,
}

impl Default for BlstmAttSimConfig {
    fn default() -> Self {
        Self {
            n_bands: 23,
            blstm_layers: 2,
            hidden: 512,
            attention_size: 128,
            n_classes: 4,
        }
    }
}

impl BlstmAttSimConfig {
    fn validate(&self) -> Result<()> {
        if self.blstm_layers != 2 {
            return Err(ModelError::BadConfig(
                "this architecture has exactly two BLSTM layers".into(),
            ));
        }
        if self.n_bands == 0 || self.hidden == 0 || self.attention_size == 0 || self.n_classes < 2 {
            return Err(ModelError::BadConfig("sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Architecture {
    CnnRnnAtt(CnnRnnAttConfig),
    BlstmAttSim(BlstmAttSimConfig),
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::CnnRnnAtt(_) => "cnnrnnatt",
            Architecture::BlstmAttSim(_) => "blstmattsim",
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Architecture::CnnRnnAtt(c) => c.n_classes,
            Architecture::BlstmAttSim(c) => c.n_classes,
        }
    }

    pub fn n_bands(&self) -> usize {
        match self {
            Architecture::CnnRnnAtt(c) => c.n_bands,
            Architecture::BlstmAttSim(c) => c.n_bands,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::CnnRnnAtt(c) => c.validate(),
            Architecture::BlstmAttSim(c) => c.validate(),
        }
    }
}

/// Named trainable tensors in build order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    fn add(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }
}

struct Init<'a, T> {
    seed: u64,
    store: &'a mut ParamStore<T>,
}

impl<T: Scalar> Init<'_, T> {
    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stable_hash64(&[&self.seed.to_le_bytes(), name.as_bytes()]))
    }

    fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> usize {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = self.rng(name);
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.random_range(-limit..limit))).collect();
        self.store.add(name.to_string(), Tensor::new(shape, data))
    }

    fn fill(&mut self, name: &str, shape: &[usize], value: f64) -> usize {
        let n = shape.iter().product();
        self.store
            .add(name.to_string(), Tensor::new(shape, vec![T::lit(value); n]))
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        Dense {
            w: self.glorot(&format!("{name}.w"), &[fan_in, fan_out], fan_in, fan_out),
            b: self.fill(&format!("{name}.b"), &[fan_out], 0.0),
        }
    }

    fn bn(&mut self, name: &str, features: usize, bn: &mut Vec<(String, BnState<T>)>) -> Bn {
        bn.push((name.to_string(), BnState::new(features)));
        Bn {
            gamma: self.fill(&format!("{name}.gamma"), &[features], 1.0),
            beta: self.fill(&format!("{name}.beta"), &[features], 0.0),
            state: bn.len() - 1,
        }
    }

    fn lstm_dir(&mut self, name: &str, feat: usize, hidden: usize) -> [usize; 3] {
        let h4 = 4 * hidden;
        let wx = self.glorot(&format!("{name}.wx"), &[feat, h4], feat, h4);
        let wh = self.glorot(&format!("{name}.wh"), &[hidden, h4], hidden, h4);
        let mut bias = vec![0.0; h4];
        bias[hidden..2 * hidden].fill(1.0);
        let b = self.store.add(format!("{name}.b"), Tensor::from_f64(&[h4], &bias));
        [wx, wh, b]
    }

    fn blstm(&mut self, name: &str, feat: usize, hidden: usize) -> [[usize; 3]; 2] {
        [
            self.lstm_dir(&format!("{name}.fwd"), feat, hidden),
            self.lstm_dir(&format!("{name}.bwd"), feat, hidden),
        ]
    }

    fn attention(&mut self, dim: usize, att: usize) -> [usize; 3] {
        [
            self.glorot("att.w", &[dim, att], dim, att),
            self.fill("att.b", &[att], 0.0),
            self.glorot("att.v", &[att], att, 1),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Bn {
    gamma: usize,
    beta: usize,
    state: usize,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    w: usize,
    b: usize,
    bn: Option<Bn>,
    stride: (usize, usize),
    pool: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
enum Layout {
    CnnRnnAtt {
        conv: Vec<ConvLayer>,
        blstm: [[usize; 3]; 2],
        fc: Vec<(Dense, Bn)>,
        dropout: f64,
        att: [usize; 3],
        out: Dense,
    },
    BlstmAttSim {
        blstm: Vec<[[usize; 3]; 2]>,
        att: [usize; 3],
        out: Dense,
    },
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    /// The attention node; its weights are available via `Graph::attention_weights`.
    pub attention: Var,
}

/// Parameters, batch-norm statistics, topology and mode of one model.
#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    arch: Architecture,
    pub params: ParamStore<T>,
    pub bn: Vec<(String, BnState<T>)>,
    layout: Layout,
    mode: Mode,
}

pub fn build_cnnrnnatt<T: Scalar>(cfg: &CnnRnnAttConfig, seed: u64) -> Result<ModelGraph<T>> {
    ModelGraph::build(&Architecture::CnnRnnAtt(cfg.clone()), seed)
}

pub fn build_blstmattsim<T: Scalar>(cfg: &BlstmAttSimConfig, seed: u64) -> Result<ModelGraph<T>> {
    ModelGraph::build(&Architecture::BlstmAttSim(cfg.clone()), seed)
}

impl<T: Scalar> ModelGraph<T> {
    /// Glorot-uniform weights, zero biases, unit forget-gate bias.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let mut init = Init {
            seed,
            store: &mut params,
        };
        let layout = match arch {
            Architecture::CnnRnnAtt(cfg) => {
                let mut conv = Vec::new();
                let mut ch = 1;
                for (i, c) in cfg.conv_layers.iter().enumerate() {
                    let (kh, kw) = c.kernel;
                    let name = format!("conv{i}");
                    let w = init.glorot(
                        &format!("{name}.w"),
                        &[c.channels, ch, kh, kw],
                        ch * kh * kw,
                        c.channels * kh * kw,
                    );
                    let b = init.fill(&format!("{name}.b"), &[c.channels], 0.0);
                    let norm = cfg
                        .conv_batchnorm
                        .then(|| init.bn(&format!("{name}.bn"), c.channels, &mut bn));
                    conv.push(ConvLayer {
                        w,
                        b,
                        bn: norm,
                        stride: c.stride,
                        pool: c.pool,
                    });
                    ch = c.channels;
                }
                let seq_feat = ch * cfg.conv_band_width();
                let blstm = init.blstm("blstm0", seq_feat, cfg.blstm_hidden);
                let mut fc = Vec::new();
                let mut width = 2 * cfg.blstm_hidden;
                for (i, &size) in cfg.fc_sizes.iter().enumerate() {
                    let d = init.dense(&format!("fc{i}"), width, size);
                    let n = init.bn(&format!("fc{i}.bn"), size, &mut bn);
                    fc.push((d, n));
                    width = size;
                }
                let att = init.attention(width, cfg.attention_size);
                let out = init.dense("out", width, cfg.n_classes);
                Layout::CnnRnnAtt {
                    conv,
                    blstm,
                    fc,
                    dropout: cfg.dropout,
                    att,
                    out,
                }
            }
            Architecture::BlstmAttSim(cfg) => {
                let mut layers = Vec::new();
                let mut width = cfg.n_bands;
                for i in 0..cfg.blstm_layers {
                    layers.push(init.blstm(&format!("blstm{i}"), width, cfg.hidden));
                    width = 2 * cfg.hidden;
                }
                let att = init.attention(width, cfg.attention_size);
                let out = init.dense("out", width, cfg.n_classes);
                Layout::BlstmAttSim {
                    blstm: layers,
                    att,
                    out,
                }
            }
        };
        Ok(Self {
            arch: arch.clone(),
            params,
            bn,
            layout,
            mode: Mode::Train,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// One line per tensor plus the total; identical for identical configs.
    pub fn param_report(&self) -> String {
        let mut out = format!("{} parameters\n", self.arch.tag());
        for (name, t) in self.params.names.iter().zip(&self.params.tensors) {
            let _ = writeln!(out, "  {name:<20} {:?} {}", t.shape, t.len());
        }
        let _ = writeln!(out, "  total {}", self.param_count());
        out
    }

    /// `features [batch, frames, bands] -> logits [batch, n_classes]`.
    /// `dropout_seed` only matters in train mode.
    pub fn forward(&mut self, g: &mut Graph<T>, features: Tensor<T>, dropout_seed: u64) -> Result<Forward> {
        let &[batch, frames, bands] = features.shape.as_slice() else {
            return Err(ModelError::ShapeMismatch(format!(
                "features must be [batch, frames, bands], got {:?}",
                features.shape
            )));
        };
        if bands != self.arch.n_bands() {
            return Err(ModelError::ShapeMismatch(format!(
                "model expects {} bands, got {bands}",
                self.arch.n_bands()
            )));
        }
        let p: Vec<Var> = self
            .params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.param(t, i))
            .collect();
        let lstm = |ix: [[usize; 3]; 2]| {
            let dir = |d: [usize; 3]| LstmParams {
                wx: p[d[0]],
                wh: p[d[1]],
                b: p[d[2]],
            };
            (dir(ix[0]), dir(ix[1]))
        };
        let att_params = |a: [usize; 3]| AttentionParams {
            w: p[a[0]],
            b: p[a[1]],
            v: p[a[2]],
        };
        let mode = self.mode;
        match &self.layout {
            Layout::CnnRnnAtt {
                conv,
                blstm,
                fc,
                dropout,
                att,
                out,
            } => {
                let mut x = g.input(
                    Tensor::new(&[batch, 1, frames, bands], features.data),
                    false,
                );
                for layer in conv {
                    x = g.conv2d(x, p[layer.w], p[layer.b], layer.stride)?;
                    if let Some(n) = layer.bn {
                        x = g.batchnorm(x, p[n.gamma], p[n.beta], 1, &mut self.bn[n.state].1, mode)?;
                    }
                    x = g.relu(x);
                    if let Some(pool) = layer.pool {
                        x = g.maxpool2d(x, pool)?;
                    }
                }
                x = g.conv_to_seq(x)?;
                let (f, b) = lstm(*blstm);
                x = g.blstm(x, f, b)?;
                for (k, (d, n)) in fc.iter().enumerate() {
                    x = g.linear(x, p[d.w], Some(p[d.b]))?;
                    x = g.batchnorm(x, p[n.gamma], p[n.beta], 2, &mut self.bn[n.state].1, mode)?;
                    x = g.relu(x);
                    let seed = stable_hash64(&[&dropout_seed.to_le_bytes(), &(k as u64).to_le_bytes()]);
                    x = g.dropout(x, *dropout, mode, seed)?;
                }
                let attention = g.attention(x, att_params(*att))?;
                let logits = g.linear(attention, p[out.w], Some(p[out.b]))?;
                Ok(Forward { logits, attention })
            }
            Layout::BlstmAttSim { blstm, att, out } => {
                let mut x = g.input(features, false);
                for layer in blstm {
                    let (f, b) = lstm(*layer);
                    x = g.blstm(x, f, b)?;
                }
                let attention = g.attention(x, att_params(*att))?;
                let logits = g.linear(attention, p[out.w], Some(p[out.b]))?;
                Ok(Forward { logits, attention })
            }
        }
    }

    /// Gradients aligned with `params` (zeros where none arrived).
    pub fn collect_grads(&self, g: &Graph<T>) -> Vec<Vec<T>> {
        let mut grads: Vec<Vec<T>> = self
            .params
            .tensors
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        for (i, gr) in g.param_grads() {
            for (a, &b) in grads[i].iter_mut().zip(gr) {
                *a += b;
            }
        }
        grads
    }

    /// Softmax class probabilities in eval mode, `[batch, n_classes]`.
    pub fn predict_proba(&mut self, features: Tensor<T>) -> Result<Tensor<T>> {
        let previous = self.mode;
        self.mode = Mode::Eval;
        let mut g = Graph::new();
        let result = self.forward(&mut g, features, 0);
        self.mode = previous;
        let fwd = result?;
        let logits = g.value(fwd.logits);
        let k = logits.last_dim();
        Ok(Tensor::new(&logits.shape, super::graph::softmax_rows(&logits.data, k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_features(batch: usize, frames: usize, bands: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            &[batch, frames, bands],
            (0..batch * frames * bands).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    /// Independent count from layer sizes.
    fn cnn_count_oracle(cfg: &CnnRnnAttConfig) -> usize {
        let mut total = 0;
        let mut ch = 1;
        let mut band = cfg.n_bands;
        for c in &cfg.conv_layers {
            total += (ch * c.kernel.0 * c.kernel.1 + 1) * c.channels;
            ch = c.channels;
            if let Some(p) = c.pool {
                band /= p.1;
            }
        }
        let h = cfg.blstm_hidden;
        total += 2 * 4 * h * (ch * band + h + 1);
        let mut width = 2 * h;
        for &s in &cfg.fc_sizes {
            total += (width + 1) * s + 2 * s;
            width = s;
        }
        total += width * cfg.attention_size + 2 * cfg.attention_size;
        total + (width + 1) * cfg.n_classes
    }

    #[test]
    fn default_param_counts_are_pinned() {
        let cfg = CnnRnnAttConfig::default();
        let m = build_cnnrnnatt::<f32>(&cfg, 0).unwrap();
        assert_eq!(m.param_count(), cnn_count_oracle(&cfg));
        assert_eq!(m.param_count(), 4_407_908);
        let sim = build_blstmattsim::<f32>(&BlstmAttSimConfig::default(), 0).unwrap();
        assert_eq!(sim.param_count(), 8_626_436);
        assert_eq!(
            m.param_report(),
            build_cnnrnnatt::<f32>(&cfg, 1).unwrap().param_report()
        );
    }

    #[test]
    fn default_shape_contract_and_determinism() {
        let mut m = build_cnnrnnatt::<f32>(&CnnRnnAttConfig::default(), 3).unwrap();
        m.set_mode(Mode::Eval);
        let x = random_features(2, 775, 23, 1);
        let mut g1 = Graph::new();
        let a = m.forward(&mut g1, x.clone(), 0).unwrap();
        assert_eq!(g1.shape(a.logits), [2, 4]);
        let mut g2 = Graph::new();
        let b = m.forward(&mut g2, x, 0).unwrap();
        assert_eq!(g1.value(a.logits).data, g2.value(b.logits).data);
    }

    #[test]
    fn blstmattsim_shape_and_determinism() {
        let cfg = BlstmAttSimConfig {
            hidden: 16,
            attention_size: 8,
            ..Default::default()
        };
        let mut m = build_blstmattsim::<f32>(&cfg, 2).unwrap();
        m.set_mode(Mode::Eval);
        let x = random_features(2, 40, 23, 2);
        let p1 = m.predict_proba(x.clone()).unwrap();
        assert_eq!(p1.shape, [2, 4]);
        assert_eq!(p1, m.predict_proba(x).unwrap());
        assert!(matches!(
            build_blstmattsim::<f32>(&BlstmAttSimConfig { blstm_layers: 3, ..cfg }, 0),
            Err(ModelError::BadConfig(_))
        ));
    }

    fn coverage(arch: Architecture) {
        let mut m = ModelGraph::<f64>::build(&arch, 4).unwrap();
        let x = random_features(3, 24, 23, 5).cast::<f64>();
        let mut g = Graph::new();
        let f = m.forward(&mut g, x, 9).unwrap();
        let loss = g.softmax_cross_entropy(f.logits, &[0, 1, 3]).unwrap();
        g.backward(loss).unwrap();
        for (name, grad) in m.params.names.iter().zip(m.collect_grads(&g)) {
            assert!(grad.iter().any(|&v| v != 0.0), "{name} received no gradient");
        }
    }

    #[test]
    fn every_parameter_gets_gradient() {
        let mut cnn = CnnRnnAttConfig::desk_scale();
        cnn.conv_batchnorm = true;
        coverage(Architecture::CnnRnnAtt(cnn));
        coverage(Architecture::BlstmAttSim(BlstmAttSimConfig {
            hidden: 8,
            attention_size: 4,
            ..Default::default()
        }));
    }

    #[test]
    fn mode_toggle_leaves_parameters() {
        let mut m = build_cnnrnnatt::<f32>(&CnnRnnAttConfig::desk_scale(), 1).unwrap();
        let before = m.params.clone();
        let x = random_features(2, 30, 23, 3);
        let mut g = Graph::new();
        m.forward(&mut g, x.clone(), 1).unwrap();
        m.set_mode(Mode::Eval);
        m.predict_proba(x).unwrap();
        assert_eq!(m.params, before);
        assert_eq!(m.mode(), Mode::Eval);
    }

    #[test]
    fn bad_configs() {
        let mut c = CnnRnnAttConfig::desk_scale();
        c.dropout = 1.0;
        assert!(build_cnnrnnatt::<f32>(&c, 0).is_err());
        let mut c = CnnRnnAttConfig::desk_scale();
        c.n_bands = 3;
        assert!(build_cnnrnnatt::<f32>(&c, 0).is_err());
    }
}
