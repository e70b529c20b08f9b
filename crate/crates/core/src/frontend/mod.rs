//! Log-Mel filterbank front-end: fixed-length framing, Mel energies and
//! per-file z-normalization.

mod cache;
mod dataset;
mod fbank;

pub use cache::FeatureCache;
pub use dataset::FeatureSet;
pub use fbank::{n_frames, FbankExtractor, MelFilterbank};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("sample rate {found} Hz does not match configured {expected} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("invalid fbank config: {0}")]
    BadConfig(String),
    #[error("feature cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FrontendError>;

/// Statistics used by [`znorm_per_file`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// One mean and one standard deviation over every cell of the file.
    #[default]
    Global,
    /// One mean and standard deviation per filter band.
    PerBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbankConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_bands: usize,
    pub max_seconds: f64,
    pub sample_rate: u32,
    pub fft_size: usize,
    pub log_floor: f64,
    pub low_hz: f64,
    /// Upper filter edge; `None` means Nyquist.
    pub high_hz: Option<f64>,
    pub norm: NormScope,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            window_ms: 26.0,
            shift_ms: 9.0,
            n_bands: 23,
            max_seconds: 7.0,
            sample_rate: 16_000,
            fft_size: 512,
            log_floor: 1e-10,
            low_hz: 0.0,
            high_hz: None,
            norm: NormScope::Global,
        }
    }
}

impl FbankConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.shift_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn max_samples(&self) -> usize {
        (self.max_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn high_hz(&self) -> f64 {
        self.high_hz.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    /// Frames produced for a fixed-length input.
    pub fn frames_per_file(&self) -> usize {
        n_frames(self.max_samples(), self.window_samples(), self.shift_samples())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FrontendError::BadConfig(m.to_string()));
        if !(self.shift_ms > 0.0) {
            return bad("shift_ms must be positive");
        }
        if !(self.window_ms > self.shift_ms) {
            return bad("window_ms must exceed shift_ms");
        }
        if self.n_bands == 0 {
            return bad("n_bands must be at least 1");
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.fft_size < self.window_samples() {
            return bad("fft_size must cover the analysis window");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if self.max_samples() < self.window_samples() {
            return bad("max_seconds shorter than one analysis window");
        }
        if !(self.low_hz >= 0.0 && self.low_hz < self.high_hz())
            || self.high_hz() > self.sample_rate as f64 / 2.0
        {
            return bad("filter edges must satisfy 0 <= low < high <= Nyquist");
        }
        Ok(())
    }
}

/// Log-Mel feature grid, row-major `n_frames x n_bands`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_bands: usize,
    pub normalized: bool,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, n_frames: usize, n_bands: usize) -> Self {
        assert_eq!(values.len(), n_frames * n_bands, "feature grid shape");
        Self {
            values,
            n_frames,
            n_bands,
            normalized: false,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_bands)
    }

    pub fn get(&self, frame: usize, band: usize) -> f64 {
        self.values[frame * self.n_bands + band]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_bands..(frame + 1) * self.n_bands]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation of all cells.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.values.len() as f64)
            .sqrt()
    }

    /// Average over frames: one value per band.
    pub fn band_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_bands];
        for f in 0..self.n_frames {
            for (o, v) in out.iter_mut().zip(self.row(f)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.n_frames as f64);
        out
    }
}

/// Truncate or zero-pad at the end to exactly `max_seconds` of audio.
pub fn fix_length(buffer: &AudioBuffer, cfg: &FbankConfig) -> AudioBuffer {
    let target = cfg.max_samples();
    let mut samples = buffer.samples.clone();
    samples.resize(target, 0.0);
    AudioBuffer::new(samples, buffer.sample_rate)
}

/// Unnormalized log-Mel energies.
pub fn extract_fbank(buffer: &AudioBuffer, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    FbankExtractor::new(cfg)?.extract(buffer)
}

const STD_EPS: f64 = 1e-12;

/// Z-normalize with statistics of the file itself. Near-constant inputs map
/// to all zeros.
pub fn znorm_per_file(features: &FeatureMatrix) -> FeatureMatrix {
    znorm_with(features, NormScope::Global)
}

pub fn znorm_with(features: &FeatureMatrix, scope: NormScope) -> FeatureMatrix {
    let mut out = features.clone();
    match scope {
        NormScope::Global => {
            let mean = features.mean();
            let std = features.std();
            if std < STD_EPS {
                out.values.iter_mut().for_each(|v| *v = 0.0);
            } else {
                out.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
            }
        }
        NormScope::PerBand => {
            let (rows, cols) = features.shape();
            for c in 0..cols {
                let column = (0..rows).map(|r| features.get(r, c));
                let mean = column.clone().sum::<f64>() / rows as f64;
                let var = column.map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
                let std = var.sqrt();
                for r in 0..rows {
                    let v = &mut out.values[r * cols + c];
                    *v = if std < STD_EPS { 0.0 } else { (*v - mean) / std };
                }
            }
        }
    }
    out.normalized = true;
    out
}

/// fix_length, extraction and normalization in one call.
pub fn compute_features(buffer: &AudioBuffer, extractor: &FbankExtractor) -> Result<FeatureMatrix> {
    let cfg = extractor.config();
    let fixed = fix_length(buffer, cfg);
    let raw = extractor.extract(&fixed)?;
    Ok(znorm_with(&raw, cfg.norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_geometry() {
        let cfg = FbankConfig::default();
        assert_eq!(cfg.window_samples(), 416);
        assert_eq!(cfg.shift_samples(), 144);
        assert_eq!(cfg.max_samples(), 112_000);
        assert_eq!(cfg.frames_per_file(), 775);
        cfg.validate().unwrap();
    }

    #[test]
    fn fix_length_cases() {
        let cfg = FbankConfig::default();
        let long = AudioBuffer::new((0..128_000).map(|i| (i % 7) as f32 * 0.1).collect(), 16000);
        let out = fix_length(&long, &cfg);
        assert_eq!(out.samples, long.samples[..112_000]);

        let short = AudioBuffer::new(vec![0.3; 16_000], 16000);
        let out = fix_length(&short, &cfg);
        assert_eq!(out.len(), 112_000);
        assert!(out.samples[..16_000].iter().all(|&s| s == 0.3));
        assert!(out.samples[16_000..].iter().all(|&s| s == 0.0));

        let exact = AudioBuffer::new(vec![0.1; 112_000], 16000);
        assert_eq!(fix_length(&exact, &cfg), exact);
    }

    #[test]
    fn znorm_small_example() {
        let fm = FeatureMatrix::new(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let z = znorm_per_file(&fm);
        let expect = [-1.342, -0.447, 0.447, 1.342];
        for (v, e) in z.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-3, "{v} vs {e}");
        }
        assert!(z.normalized);
    }

    #[test]
    fn znorm_constant_is_zero() {
        let fm = FeatureMatrix::new(vec![-23.0; 12], 4, 3);
        assert!(znorm_per_file(&fm).values.iter().all(|&v| v == 0.0));
        assert!(znorm_with(&fm, NormScope::PerBand)
            .values
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn per_band_scope_normalizes_columns() {
        let fm = FeatureMatrix::new(vec![1.0, 10.0, 3.0, 30.0, 5.0, 50.0], 3, 2);
        let z = znorm_with(&fm, NormScope::PerBand);
        for c in 0..2 {
            let col: Vec<f64> = (0..3).map(|r| z.get(r, c)).collect();
            let m = col.iter().sum::<f64>() / 3.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = FbankConfig::default();
        cfg.window_ms = 5.0;
        assert!(cfg.validate().is_err());
        let mut cfg = FbankConfig::default();
        cfg.fft_size = 256;
        assert!(cfg.validate().is_err());
        let mut cfg = FbankConfig::default();
        cfg.n_bands = 0;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn znorm_idempotent(vals in proptest::collection::vec(-50.0f64..50.0, 6..60)) {
            let n = vals.len() / 3 * 3;
            let fm = FeatureMatrix::new(vals[..n].to_vec(), n / 3, 3);
            let once = znorm_per_file(&fm);
            let twice = znorm_per_file(&once);
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            if fm.std() >= 1e-6 {
                prop_assert!(once.mean().abs() < 1e-9);
                prop_assert!((once.std() - 1.0).abs() < 1e-9);
            }
        }
    }
}
