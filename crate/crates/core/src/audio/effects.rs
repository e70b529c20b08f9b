use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{apply_speed, apply_tempo, check_factor, clip, AudioBuffer, AudioError, Result};

pub const BASS_CORNER_HZ: f64 = 100.0;
pub const TREBLE_CORNER_HZ: f64 = 3000.0;
pub const MAX_SHELF_GAIN_DB: f64 = 20.0;

/// The six augmentation effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Speed,
    Volume,
    Tempo,
    Bass,
    Treble,
    Overdrive,
}

impl EffectKind {
    pub const ALL: [EffectKind; 6] = [
        EffectKind::Speed,
        EffectKind::Volume,
        EffectKind::Tempo,
        EffectKind::Bass,
        EffectKind::Treble,
        EffectKind::Overdrive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EffectKind::Speed => "speed",
            EffectKind::Volume => "volume",
            EffectKind::Tempo => "tempo",
            EffectKind::Bass => "bass",
            EffectKind::Treble => "treble",
            EffectKind::Overdrive => "overdrive",
        }
    }

    /// Whether the effect changes the number of samples.
    pub fn changes_duration(self) -> bool {
        matches!(self, EffectKind::Speed | EffectKind::Tempo)
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EffectKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EffectKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown effect '{s}'"))
    }
}

/// An effect with a concrete modulation factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub kind: EffectKind,
    pub factor: f64,
}

impl EffectSpec {
    pub fn new(kind: EffectKind, factor: f64) -> Self {
        Self { kind, factor }
    }
}

/// Render one effect. Bass and treble map the factor to a shelf gain with
/// [`factor_to_gain_db`].
pub fn apply_effect(buffer: &AudioBuffer, spec: EffectSpec) -> Result<AudioBuffer> {
    match spec.kind {
        EffectKind::Speed => apply_speed(buffer, spec.factor),
        EffectKind::Volume => apply_volume(buffer, spec.factor),
        EffectKind::Tempo => apply_tempo(buffer, spec.factor),
        EffectKind::Bass => {
            check_factor(spec.factor)?;
            apply_shelf(buffer, ShelfBand::Bass, factor_to_gain_db(spec.factor))
        }
        EffectKind::Treble => {
            check_factor(spec.factor)?;
            apply_shelf(buffer, ShelfBand::Treble, factor_to_gain_db(spec.factor))
        }
        EffectKind::Overdrive => apply_overdrive(buffer, spec.factor),
    }
}

/// Map a modulation factor in [0.6, 1.5] onto a shelf gain in [-12, 12] dB.
pub fn factor_to_gain_db(factor: f64) -> f64 {
    (12.0 * (factor - 1.05) / 0.45).clamp(-12.0, 12.0)
}

pub fn apply_volume(buffer: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    check_factor(factor)?;
    if factor == 1.0 {
        return Ok(buffer.clone());
    }
    let samples = buffer
        .samples
        .iter()
        .map(|&s| clip(s as f64 * factor))
        .collect();
    Ok(buffer.with_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShelfBand {
    Bass,
    Treble,
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Shelving filter with unit shelf slope; `corner` is the half-gain point.
    fn shelf(band: ShelfBand, corner: f64, gain_db: f64, sample_rate: f64) -> Self {
        let a = 10f64.powf(gain_db / 40.0);
        let w0 = 2.0 * PI * corner / sample_rate;
        let (sin, cos) = w0.sin_cos();
        // slope S = 1 => alpha = sin/2 * sqrt(2)
        let alpha = sin / 2.0 * 2f64.sqrt();
        let two_sqrt_a_alpha = 2.0 * a.sqrt() * alpha;
        let (b0, b1, b2, a0, a1, a2) = match band {
            ShelfBand::Bass => (
                a * ((a + 1.0) - (a - 1.0) * cos + two_sqrt_a_alpha),
                2.0 * a * ((a - 1.0) - (a + 1.0) * cos),
                a * ((a + 1.0) - (a - 1.0) * cos - two_sqrt_a_alpha),
                (a + 1.0) + (a - 1.0) * cos + two_sqrt_a_alpha,
                -2.0 * ((a - 1.0) + (a + 1.0) * cos),
                (a + 1.0) + (a - 1.0) * cos - two_sqrt_a_alpha,
            ),
            ShelfBand::Treble => (
                a * ((a + 1.0) + (a - 1.0) * cos + two_sqrt_a_alpha),
                -2.0 * a * ((a - 1.0) + (a + 1.0) * cos),
                a * ((a + 1.0) + (a - 1.0) * cos - two_sqrt_a_alpha),
                (a + 1.0) - (a - 1.0) * cos + two_sqrt_a_alpha,
                2.0 * ((a - 1.0) - (a + 1.0) * cos),
                (a + 1.0) - (a - 1.0) * cos - two_sqrt_a_alpha,
            ),
        };
        Self {
            b: [b0 / a0, b1 / a0, b2 / a0],
            a: [a1 / a0, a2 / a0],
        }
    }

    fn process(&self, input: &[f32]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let x = x as f64;
                let y = self.b[0] * x + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Second-order shelving filter: bass shelf at 100 Hz, treble shelf at 3 kHz.
pub fn apply_shelf(buffer: &AudioBuffer, band: ShelfBand, gain_db: f64) -> Result<AudioBuffer> {
    if !(gain_db.abs() <= MAX_SHELF_GAIN_DB) {
        return Err(AudioError::GainOutOfRange(gain_db));
    }
    if gain_db == 0.0 {
        return Ok(buffer.clone());
    }
    let corner = match band {
        ShelfBand::Bass => BASS_CORNER_HZ,
        ShelfBand::Treble => TREBLE_CORNER_HZ,
    };
    let sample_rate = buffer.sample_rate as f64;
    let filter = Biquad::shelf(band, corner.min(0.45 * sample_rate), gain_db, sample_rate);
    let samples = filter.process(&buffer.samples).into_iter().map(clip).collect();
    Ok(buffer.with_samples(samples))
}

/// Drive gain for the soft clipper: 1 at factor 0, 10 at factor >= 1.5.
pub fn overdrive_gain(factor: f64) -> f64 {
    1.0 + 9.0 * factor.clamp(0.0, 1.5) / 1.5
}

/// Transfer curve of the soft clipper: `tanh(g x) / tanh(g)` on `[-1, 1]`.
pub fn overdrive_curve(x: f64, factor: f64) -> f64 {
    let g = overdrive_gain(factor);
    (g * x.clamp(-1.0, 1.0)).tanh() / g.tanh()
}

pub fn apply_overdrive(buffer: &AudioBuffer, factor: f64) -> Result<AudioBuffer> {
    check_factor(factor)?;
    let samples = buffer
        .samples
        .iter()
        .map(|&s| clip(overdrive_curve(s as f64, factor)))
        .collect();
    Ok(buffer.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tone(freq: f64, secs: f64, amp: f64) -> AudioBuffer {
        let sr = 16000;
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| (amp * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect();
        AudioBuffer::new(s, sr)
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn volume_examples() {
        let b = AudioBuffer::new(vec![0.5, -0.25], 16000);
        assert_eq!(apply_volume(&b, 0.5).unwrap().samples, vec![0.25, -0.125]);
        assert_eq!(apply_volume(&b, 1.0).unwrap(), b);
        let c = AudioBuffer::new(vec![0.9], 16000);
        assert_eq!(apply_volume(&c, 1.5).unwrap().samples, vec![1.0]);
        assert!(matches!(
            apply_volume(&b, 0.0),
            Err(AudioError::NonPositiveFactor(_))
        ));
    }

    #[test]
    fn shelf_zero_gain_is_identity() {
        let b = tone(440.0, 0.5, 0.5);
        let out = apply_shelf(&b, ShelfBand::Bass, 0.0).unwrap();
        for (x, y) in b.samples.iter().zip(&out.samples) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn bass_boost_raises_low_tone() {
        // steady-state RMS ratio, skipping the filter transient
        let b = tone(50.0, 2.0, 0.2);
        let out = apply_shelf(&b, ShelfBand::Bass, 6.0).unwrap();
        let ratio = rms(&out.samples[8000..]) / rms(&b.samples[8000..]);
        assert!((ratio - 2.0).abs() <= 0.2, "ratio {ratio}");
        let hi = tone(6000.0, 2.0, 0.2);
        let out = apply_shelf(&hi, ShelfBand::Bass, 6.0).unwrap();
        let ratio = rms(&out.samples[8000..]) / rms(&hi.samples[8000..]);
        assert!((ratio - 1.0).abs() <= 0.05, "ratio {ratio}");
    }

    #[test]
    fn treble_boost_raises_high_tone_only() {
        let hi = tone(7000.0, 1.0, 0.2);
        let out = apply_shelf(&hi, ShelfBand::Treble, 6.0).unwrap();
        let ratio = rms(&out.samples[4000..]) / rms(&hi.samples[4000..]);
        assert!((ratio - 2.0).abs() <= 0.2, "ratio {ratio}");
        let lo = tone(100.0, 1.0, 0.2);
        let out = apply_shelf(&lo, ShelfBand::Treble, 6.0).unwrap();
        let ratio = rms(&out.samples[4000..]) / rms(&lo.samples[4000..]);
        assert!((ratio - 1.0).abs() <= 0.05, "ratio {ratio}");
    }

    #[test]
    fn shelf_gain_range_checked() {
        let b = tone(100.0, 0.1, 0.1);
        assert!(matches!(
            apply_shelf(&b, ShelfBand::Treble, 20.5),
            Err(AudioError::GainOutOfRange(_))
        ));
        assert!(apply_shelf(&b, ShelfBand::Treble, -20.0).is_ok());
    }

    #[test]
    fn gain_mapping_endpoints() {
        assert_eq!(factor_to_gain_db(1.05), 0.0);
        assert!((factor_to_gain_db(1.5) - 12.0).abs() < 1e-12);
        assert!((factor_to_gain_db(0.6) + 12.0).abs() < 1e-12);
        assert_eq!(factor_to_gain_db(3.0), 12.0);
    }

    #[test]
    fn overdrive_fixed_points() {
        let b = AudioBuffer::new(vec![0.0, 1.0, -1.0, 0.3, -0.3], 16000);
        for f in [0.01, 0.6, 1.0, 1.5, 4.0] {
            let y = apply_overdrive(&b, f).unwrap().samples;
            assert_eq!(y[0], 0.0);
            assert_eq!(y[1], 1.0);
            assert_eq!(y[2], -1.0);
            assert_eq!(y[3], -y[4]);
        }
        assert_eq!(overdrive_gain(1.5), 10.0);
        assert_eq!(overdrive_gain(0.0), 1.0);
    }

    #[test]
    fn overdrive_monotone_over_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if lo == hi {
                continue;
            }
            let f = rng.random_range(0.6..1.5);
            assert!(overdrive_curve(lo, f) < overdrive_curve(hi, f), "{lo} {hi}");
            // f32 rendering may saturate to equal values but never reverses
            let y = apply_overdrive(&AudioBuffer::new(vec![lo as f32, hi as f32], 16000), f)
                .unwrap()
                .samples;
            assert!(y[0] <= y[1], "{lo} {hi} -> {y:?}");
        }
    }

    proptest! {
        #[test]
        fn volume_inverse_recovers_unclipped(
            xs in proptest::collection::vec(-0.6f32..0.6, 1..64),
            f in 0.6f64..1.5,
        ) {
            let b = AudioBuffer::new(xs, 16000);
            let back = apply_volume(&apply_volume(&b, f).unwrap(), 1.0 / f).unwrap();
            for (x, y) in b.samples.iter().zip(&back.samples) {
                // one f32 rounding per stage
                prop_assert!((x - y).abs() <= x.abs() * 2.0 * f32::EPSILON);
            }
        }

        #[test]
        fn level_effects_bounded_and_length_preserving(
            xs in proptest::collection::vec(-1.0f32..=1.0, 1..256),
            f in 0.6f64..1.5,
        ) {
            let b = AudioBuffer::new(xs, 16000);
            for spec in [
                EffectSpec::new(EffectKind::Volume, f * 3.0),
                EffectSpec::new(EffectKind::Bass, f),
                EffectSpec::new(EffectKind::Treble, f),
                EffectSpec::new(EffectKind::Overdrive, f),
            ] {
                let out = apply_effect(&b, spec).unwrap();
                prop_assert_eq!(out.len(), b.len());
                prop_assert_eq!(out.sample_rate, b.sample_rate);
                prop_assert!(out.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
            }
        }
    }
}
