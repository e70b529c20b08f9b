//! Pitch-preserving time-scale modification (WSOLA).

use std::f64::consts::PI;

use super::{check_factor, clip, AudioBuffer, AudioError, Result};

/// Frame geometry in seconds; converted to samples per buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WsolaParams {
    pub window_secs: f64,
    /// Fraction of the window shared by consecutive output frames.
    pub overlap: f64,
    pub search_secs: f64,
}

impl Default for WsolaParams {
    fn default() -> Self {
        Self {
            window_secs: 0.030,
            overlap: 0.5,
            search_secs: 0.0075,
        }
    }
}

/// Change duration by `1/factor` while keeping pitch, using default geometry.
pub fn apply_tempo(buffer: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    apply_tempo_with(buffer, factor, WsolaParams::default())
}

pub fn apply_tempo_with(
    buffer: &AudioBuffer,
    factor: f64,
    params: WsolaParams,
) -> Result<AudioBuffer> {
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

    let sr = buffer.sample_rate as f64;
    let win = ((params.window_secs * sr).round() as usize).max(4);
    let synth_hop = ((win as f64 * (1.0 - params.overlap)).round() as usize).max(1);
    let overlap_len = win - synth_hop;
    let radius = (params.search_secs * sr).round() as isize;
    let analysis_hop = synth_hop as f64 * factor;

    // periodic Hann: sums to one at 50% overlap
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
        .collect();

    let x = &buffer.samples;
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < n_in {
            x[i as usize] as f64
        } else {
            0.0
        }
    };

    let mut out = vec![0.0f64; n_out + win];
    let mut norm = vec![0.0f64; n_out + win];
    let mut prev: isize = 0;
    let mut k = 0usize;
    loop {
        let out_pos = k * synth_hop;
        if out_pos >= n_out {
            break;
        }
        let pos = if k == 0 {
            0
        } else {
            let nominal = (k as f64 * analysis_hop).round() as isize;
            let natural = prev + synth_hop as isize;
            let mut best = nominal;
            let mut best_score = f64::NEG_INFINITY;
            for cand in (nominal - radius)..=(nominal + radius) {
                if cand < 0 {
                    continue;
                }
                let mut score = 0.0;
                for i in 0..overlap_len as isize {
                    score += at(cand + i) * at(natural + i);
                }
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
            best
        };
        for (i, w) in window.iter().enumerate() {
            out[out_pos + i] += w * at(pos + i as isize);
            norm[out_pos + i] += w;
        }
        prev = pos;
        k += 1;
    }

    let samples = out
        .iter()
        .zip(&norm)
        .take(n_out)
        .map(|(&v, &w)| if w > 1e-3 { clip(v / w) } else { clip(v) })
        .collect();
    Ok(buffer.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_factor_passes_through() {
        let b = AudioBuffer::new((0..2000).map(|i| (i as f32 * 0.01).sin()).collect(), 16000);
        assert_eq!(apply_tempo(&b, 1.0).unwrap(), b);
    }

    #[test]
    fn slowing_down_lengthens() {
        let b = AudioBuffer::new(vec![0.2; 112_000], 16000);
        let out = apply_tempo(&b, 0.8).unwrap();
        assert!((out.len() as i64 - 140_000).abs() <= 480);
        // constant signal stays constant away from the edges
        assert!(out.samples[1000..130_000].iter().all(|&s| (s - 0.2).abs() < 1e-5));
    }

    #[test]
    fn rejects_bad_factor() {
        let b = AudioBuffer::new(vec![0.0; 1000], 16000);
        assert!(matches!(
            apply_tempo(&b, 0.0),
            Err(AudioError::NonPositiveFactor(_))
        ));
        assert!(matches!(
            apply_tempo(&b, 3.0),
            Err(AudioError::ResultTooShort { .. })
        ));
    }
}
