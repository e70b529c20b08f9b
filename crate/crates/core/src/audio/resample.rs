//! Playback-rate change by band-limited (Kaiser-windowed sinc) interpolation.

use std::f64::consts::PI;

use super::{check_factor, clip, AudioBuffer, AudioError, Result};

const TAPS_PER_SIDE: usize = 32;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

struct Kernel {
    /// Cutoff relative to the input Nyquist rate.
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(factor: f64) -> Self {
        let cutoff = (1.0 / factor).min(1.0);
        Self {
            cutoff,
            half_width: TAPS_PER_SIDE as f64 / cutoff,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    #[inline]
    fn weight(&self, offset: f64) -> f64 {
        let r = offset / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc(self.cutoff * offset) * window
    }
}

/// Resample so that the signal plays `factor` times faster: duration scales by
/// `1/factor` and every frequency by `factor`. The declared rate is kept.
pub fn apply_speed(buffer: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    check_factor(factor)?;
    let n_in = buffer.len();
    let n_out = (n_in as f64 / factor).round() as usize;
    let min = buffer.min_frame_len();
    if n_out < min {
        return Err(AudioError::ResultTooShort { len: n_out, min });
    }
    if factor == 1.0 {
        return Ok(buffer.clone());
    }
    let kernel = Kernel::new(factor);
    let reach = kernel.half_width.ceil() as isize;
    let x = &buffer.samples;
    let samples = (0..n_out)
        .map(|j| {
            let t = j as f64 * factor;
            let center = t.floor() as isize;
            let lo = (center - reach).max(0);
            let hi = (center + reach + 1).min(n_in as isize);
            let mut acc = 0.0;
            for k in lo..hi {
                acc += x[k as usize] as f64 * kernel.weight(t - k as f64);
            }
            clip(acc)
        })
        .collect();
    Ok(buffer.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
    }

    #[test]
    fn integer_positions_are_exact() {
        let k = Kernel::new(1.0);
        assert!((k.weight(0.0) - 1.0).abs() < 1e-15);
        for off in 1..10 {
            assert!(k.weight(off as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn halving_duration() {
        let b = AudioBuffer::new(vec![0.1; 112_000], 16000);
        let out = apply_speed(&b, 2.0).unwrap();
        assert!((out.len() as i64 - 56_000).abs() <= 1);
        assert_eq!(out.sample_rate, 16000);
    }

    #[test]
    fn too_short_result() {
        let b = AudioBuffer::new(vec![0.1; 800], 16000);
        assert!(matches!(
            apply_speed(&b, 2.0),
            Err(AudioError::ResultTooShort { len: 400, min: 416 })
        ));
        assert!(matches!(
            apply_speed(&b, -1.0),
            Err(AudioError::NonPositiveFactor(_))
        ));
    }
}
