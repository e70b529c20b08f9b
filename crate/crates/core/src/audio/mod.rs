//! Audio buffers, WAV I/O and the signal-level effects used for augmentation.
//!
//! Every effect is a pure function of its inputs and clips its output to
//! `[-1, 1]`.

mod effects;
mod resample;
mod wav;
mod wsola;

pub use effects::{
    apply_effect, apply_overdrive, apply_shelf, apply_volume, factor_to_gain_db, overdrive_curve,
    overdrive_gain,
    EffectKind, EffectSpec, ShelfBand, BASS_CORNER_HZ, MAX_SHELF_GAIN_DB, TREBLE_CORNER_HZ,
};
pub use resample::apply_speed;
pub use wav::{read_wav, write_wav};
pub use wsola::{apply_tempo, apply_tempo_with, WsolaParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no samples")]
    EmptyAudio,
    #[error("factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("result has {len} samples, fewer than the minimum {min}")]
    ResultTooShort { len: usize, min: usize },
    #[error("shelf gain {0} dB outside [-20, 20]")]
    GainOutOfRange(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Shortest signal that still yields one 26 ms analysis frame.
    pub fn min_frame_len(&self) -> usize {
        min_frame_len(self.sample_rate)
    }

    pub(crate) fn with_samples(&self, samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn min_frame_len(sample_rate: u32) -> usize {
    (0.026 * sample_rate as f64).round() as usize
}

#[inline]
pub(crate) fn clip(x: f64) -> f32 {
    x.clamp(-1.0, 1.0) as f32
}

pub(crate) fn check_factor(factor: f64) -> Result<()> {
    if factor > 0.0 && factor.is_finite() {
        Ok(())
    } else {
        Err(AudioError::NonPositiveFactor(factor))
    }
}
