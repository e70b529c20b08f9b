use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FbankConfig, FeatureMatrix, FrontendError, Result};
use crate::audio::AudioBuffer;

/// Number of full frames of `window` samples at hop `shift`.
pub fn n_frames(n_samples: usize, window: usize, shift: usize) -> usize {
    if n_samples < window {
        0
    } else {
        (n_samples - window) / shift + 1
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the Mel scale, over the
/// `fft_size / 2 + 1` power-spectrum bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Per band: first nonzero bin and its weights.
    bands: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(cfg: &FbankConfig) -> Self {
        let n_bins = cfg.fft_size / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let lo = hz_to_mel(cfg.low_hz);
        let hi = hz_to_mel(cfg.high_hz());
        let edges: Vec<f64> = (0..cfg.n_bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_bands + 1) as f64))
            .collect();
        let bands = edges
            .windows(3)
            .map(|e| {
                let (left, center, right) = (e[0], e[1], e[2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > left && f <= center {
                            (f - left) / (center - left)
                        } else if f > center && f < right {
                            (right - f) / (right - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => (start, weights.iter().map(|&(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Self { bands, n_bins }
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Dense weights of one band over all bins.
    pub fn dense_row(&self, band: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_bins];
        let (start, w) = &self.bands[band];
        row[*start..start + w.len()].copy_from_slice(w);
        row
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable extractor; the filterbank, window and FFT plan are shared
/// read-only across calls.
#[derive(Clone)]
pub struct FbankExtractor {
    cfg: FbankConfig,
    window: Vec<f64>,
    filterbank: Arc<MelFilterbank>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FbankExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbankExtractor").field("cfg", &self.cfg).finish()
    }
}

impl FbankExtractor {
    pub fn new(cfg: &FbankConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.window_samples();
        // symmetric Hamming
        let window = (0..w)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (w - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            cfg: cfg.clone(),
            window,
            filterbank: Arc::new(MelFilterbank::new(cfg)),
            fft,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, buffer: &AudioBuffer) -> Result<FeatureMatrix> {
        if buffer.sample_rate != self.cfg.sample_rate {
            return Err(FrontendError::SampleRateMismatch {
                expected: self.cfg.sample_rate,
                found: buffer.sample_rate,
            });
        }
        let win = self.window.len();
        let hop = self.cfg.shift_samples();
        let frames = n_frames(buffer.len(), win, hop);
        let bands = self.cfg.n_bands;
        let floor = self.cfg.log_floor;
        let mut values = vec![0.0; frames * bands];
        let mut spectrum = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.filterbank.n_bins()];
        for (f, row) in values.chunks_exact_mut(bands).enumerate() {
            let start = f * hop;
            let frame = &buffer.samples[start..start + win];
            for (slot, (&x, &w)) in spectrum.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(x as f64 * w, 0.0);
            }
            spectrum[win..].iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (p, c) in power.iter_mut().zip(&spectrum) {
                *p = c.norm_sqr();
            }
            self.filterbank.apply(&power, row);
            for v in row.iter_mut() {
                *v = v.max(floor).ln();
            }
        }
        Ok(FeatureMatrix::new(values, frames, bands))
    }
}
