use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{SynthCorpusSpec, UtterancePlan};

/// (centre Hz, bandwidth Hz, gain) of a neutral vocal tract.
const FORMANTS: [(f64, f64, f64); 4] = [(600.0, 110.0, 1.0), (1700.0, 140.0, 0.55), (2700.0, 200.0, 0.35), (3600.0, 260.0, 0.2)];
/// Harmonic amplitudes are refreshed every this many samples.
const BLOCK: usize = 64;

fn formant_gain(f: f64, scale: f64, wobble: f64) -> f64 {
    let mut g = 0.02;
    for (i, &(fc, bw, gain)) in FORMANTS.iter().enumerate() {
        let fc = fc * scale * if i < 2 { wobble } else { 1.0 };
        let x = (f - fc) / (0.5 * bw * scale);
        g += gain / (1.0 + x * x);
    }
    g
}

/// Deterministic waveform for one planned utterance, peak-normalized into
/// [-1, 1]. With a room tail the output is truncated to the dry length.
pub fn render_utterance(spec: &SynthCorpusSpec, plan: &UtterancePlan) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let sr = spec.sample_rate as f64;
    let (lo, hi) = spec.duration_range;
    let dur = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let n = (dur * sr).round() as usize;
    let sig = &plan.signature;
    let f0_offset = sig.f0_offset_st + rng.random_range(-0.7..0.7);
    let slope = sig.f0_slope_st_per_s * rng.random_range(0.75..1.25);
    let rate = sig.syllable_rate_hz * rng.random_range(0.85..1.15);
    let snr_db = sig.snr_db + rng.random_range(-2.0..2.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let vowel_phase = rng.random_range(0.0..2.0 * PI);

    let envelope = |t: f64| -> f64 {
        let attack = (t / 0.03).min(1.0);
        let release = ((dur - t) / 0.08).clamp(0.0, 1.0);
        let syllable = 1.0 - sig.envelope_depth + sig.envelope_depth * (0.5 - 0.5 * (2.0 * PI * rate * t + phase).cos());
        let trend = 10f64.powf(sig.energy_slope_db_per_s * (t - dur / 2.0) / 20.0);
        attack * release * syllable * trend
    };
    let f0_at = |t: f64| -> f64 {
        let st = f0_offset + slope * (t - dur / 2.0);
        plan.voice.f0_hz * (st / 12.0 * LN_2).exp() * (1.0 + 0.004 * (2.0 * PI * 5.5 * t).sin())
    };

    let max_freq = (0.45 * sr).min(7000.0);
    let mut voiced = vec![0.0f64; n];
    let mut env = vec![0.0f64; n];
    let mut amps: Vec<f64> = Vec::new();
    let mut theta = 0.0f64;
    for start in (0..n).step_by(BLOCK) {
        let tb = start as f64 / sr;
        let f0 = f0_at(tb);
        let wobble = 1.0 + 0.08 * (PI * rate * tb + vowel_phase).sin();
        let k_max = ((max_freq / f0).floor() as usize).max(1);
        amps.clear();
        amps.extend((1..=k_max).map(|k| (k as f64).powf(-sig.spectral_tilt) * formant_gain(k as f64 * f0, plan.voice.formant_scale, wobble)));
        for i in start..(start + BLOCK).min(n) {
            let t = i as f64 / sr;
            theta = (theta + 2.0 * PI * f0_at(t) / sr) % (2.0 * PI);
            // sin(k θ) by the Chebyshev recurrence
            let (s1, c) = theta.sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = amps[0] * s1;
            for &a in &amps[1..] {
                let next = 2.0 * c * cur - prev;
                prev = cur;
                cur = next;
                acc += a * cur;
            }
            env[i] = envelope(t);
            voiced[i] = env[i] * acc;
        }
    }

    let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    let noise_gain = rms(&voiced) / (10f64.powf(snr_db / 20.0) * rms(&env).max(1e-9));
    let mut out: Vec<f64> = voiced
        .iter()
        .zip(&env)
        .map(|(&v, &e)| v + noise_gain * e.max(0.05) * rng.random_range(-1.0..1.0) * 3f64.sqrt())
        .collect();

    if spec.reverb_seconds > 0.0 {
        let len = (spec.reverb_seconds * sr).round() as usize;
        let tail: Vec<f64> = (0..len)
            .map(|m| 0.12 * rng.random_range(-1.0..1.0) * (-6.9 * m as f64 / len as f64).exp())
            .collect();
        let wet = convolve(&out, &tail);
        out.iter_mut().zip(&wet).for_each(|(o, w)| *o += w);
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let target = rng.random_range(0.4..0.85);
    out.iter().map(|&v| ((v / peak) * target).clamp(-1.0, 1.0) as f32).collect()
}

/// Linear convolution truncated to `x.len()`.
fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let size = (x.len() + h.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex<f64>> = v.iter().map(|&r| Complex::new(r, 0.0)).collect();
        b.resize(size, Complex::new(0.0, 0.0));
        b
    };
    let (mut a, mut b) = (pad(x), pad(h));
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..x.len()].iter().map(|c| c.re / size as f64).collect()
}
