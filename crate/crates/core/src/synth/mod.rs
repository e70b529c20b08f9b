//! Labeled synthetic corpora. Emotion classes are carried by prosody-like
//! parameters (F0 offset and slope, syllable-rate envelope, spectral tilt,
//! breathiness); speakers by F0 range and formant scale; recording
//! conditions by an optional room tail. A shifted sibling corpus moves every
//! speaker along the same log-frequency axis so that class cues survive but
//! their absolute spectral position changes.

mod signal;

use std::f64::consts::LN_2;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav, AudioBuffer};
use crate::corpus::{CorpusManifest, Emotion, Style, UtteranceRecord};
use crate::util::{stable_hash64, write_json_pretty};

pub use signal::render_utterance;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec field '{field}': {message}")]
    InvalidSpec { field: String, message: String },
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Prosodic fingerprint of one emotion class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub emotion: Emotion,
    /// F0 offset from the speaker's base, semitones.
    pub f0_offset_st: f64,
    /// Linear F0 glide over the utterance, semitones per second.
    pub f0_slope_st_per_s: f64,
    /// Syllable-like amplitude modulation rate, Hz.
    pub syllable_rate_hz: f64,
    /// Modulation depth in [0, 1].
    pub envelope_depth: f64,
    /// Level trend over the utterance, dB per second.
    pub energy_slope_db_per_s: f64,
    /// Harmonic amplitude falls as k^-tilt.
    pub spectral_tilt: f64,
    /// Voiced-to-noise ratio, dB.
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCorpusSpec {
    pub name: String,
    pub n_speakers: usize,
    pub utterances_per_class_per_speaker: usize,
    /// The first `n_classes` entries of `signatures` are generated.
    pub n_classes: usize,
    pub duration_range: (f64, f64),
    pub seed: u64,
    pub sample_rate: u32,
    /// Speaker ids are `<prefix><index>`.
    pub speaker_prefix: String,
    pub base_f0_hz: f64,
    /// Speaker F0 bases spread uniformly over +-this many semitones.
    pub speaker_pitch_spread_st: f64,
    /// Speaker formant scales spread uniformly over exp(+-this).
    pub speaker_timbre_spread: f64,
    /// Log-frequency shift applied to every speaker's F0 and formants.
    pub timbre_shift: f64,
    /// Room tail length in seconds; 0 is a dry studio.
    pub reverb_seconds: f64,
    pub signatures: Vec<ClassSignature>,
}

impl SynthCorpusSpec {
    /// The pinned spec that anchors the end-to-end checks: 2 speakers,
    /// 10 utterances per class and speaker, dry room.
    pub fn reference() -> Self {
        Self {
            name: "synthA".into(),
            n_speakers: 2,
            utterances_per_class_per_speaker: 10,
            n_classes: 4,
            duration_range: (1.2, 2.0),
            seed: 20240521,
            sample_rate: 16000,
            speaker_prefix: "a".into(),
            base_f0_hz: 140.0,
            speaker_pitch_spread_st: 2.5,
            speaker_timbre_spread: 0.06,
            timbre_shift: 0.0,
            reverb_seconds: 0.0,
            signatures: default_signatures(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(SynthError::InvalidSpec {
                field: field.into(),
                message: message.into(),
            })
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", "must be a non-empty plain name");
        }
        if self.n_speakers == 0 {
            return bad("n_speakers", "must be at least 1");
        }
        if self.utterances_per_class_per_speaker == 0 {
            return bad("utterances_per_class_per_speaker", "must be at least 1");
        }
        if self.n_classes == 0 || self.n_classes > self.signatures.len() {
            return bad("n_classes", "must be between 1 and the number of signatures");
        }
        let (lo, hi) = self.duration_range;
        if !(lo > 0.5 && lo <= hi && hi <= 10.0) {
            return bad("duration_range", "must satisfy 0.5 < lo <= hi <= 10");
        }
        if self.sample_rate < 8000 {
            return bad("sample_rate", "must be at least 8000");
        }
        if !(self.base_f0_hz > 40.0 && self.base_f0_hz < 600.0) {
            return bad("base_f0_hz", "must lie in (40, 600)");
        }
        if !(self.reverb_seconds >= 0.0 && self.reverb_seconds <= 2.0) {
            return bad("reverb_seconds", "must lie in [0, 2]");
        }
        if !(self.speaker_timbre_spread >= 0.0 && self.speaker_timbre_spread < 1.0) {
            return bad("speaker_timbre_spread", "must lie in [0, 1)");
        }
        if !self.timbre_shift.is_finite() || self.timbre_shift.abs() > 1.0 {
            return bad("timbre_shift", "must lie in [-1, 1]");
        }
        for (i, s) in self.signatures.iter().enumerate() {
            if !(0.0..=1.0).contains(&s.envelope_depth) || s.syllable_rate_hz <= 0.0 {
                return bad(&format!("signatures[{i}]"), "depth must lie in [0, 1] and rate be positive");
            }
        }
        let mut seen: Vec<Emotion> = self.signatures.iter().map(|s| s.emotion).collect();
        seen.sort_by_key(|e| e.index());
        seen.dedup();
        if seen.len() != self.signatures.len() {
            return bad("signatures", "emotions must be distinct");
        }
        Ok(())
    }

    pub fn speakers(&self) -> Vec<String> {
        (0..self.n_speakers)
            .map(|k| format!("{}{k:02}", self.speaker_prefix))
            .collect()
    }

    pub fn n_utterances(&self) -> usize {
        self.n_speakers * self.n_classes * self.utterances_per_class_per_speaker
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = serde_json::from_str(&crate::util::strip_json_comments(&text))?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn default_signatures() -> Vec<ClassSignature> {
    let sig = |emotion, f0, slope, rate, depth, energy, tilt, snr| ClassSignature {
        emotion,
        f0_offset_st: f0,
        f0_slope_st_per_s: slope,
        syllable_rate_hz: rate,
        envelope_depth: depth,
        energy_slope_db_per_s: energy,
        spectral_tilt: tilt,
        snr_db: snr,
    };
    vec![
        sig(Emotion::Angry, 2.0, -4.0, 5.5, 0.8, -3.0, 0.7, 28.0),
        sig(Emotion::Happy, 5.0, 5.0, 4.5, 0.6, 2.0, 1.2, 20.0),
        sig(Emotion::Sad, -3.0, -2.0, 2.5, 0.4, -6.0, 1.7, 10.0),
        sig(Emotion::Neutral, 0.0, 0.0, 3.5, 0.5, 0.0, 1.4, 18.0),
    ]
}

/// Same class signatures with a disjoint speaker set moved by `timbre_shift`
/// in log frequency (F0 and formants scale by `exp(timbre_shift)`), and an
/// optional different room.
pub fn derive_shifted_corpus(spec: &SynthCorpusSpec, timbre_shift: f64, reverb_seconds: Option<f64>) -> SynthCorpusSpec {
    SynthCorpusSpec {
        name: format!("{}-shifted", spec.name),
        speaker_prefix: format!("{}x", spec.speaker_prefix),
        timbre_shift: spec.timbre_shift + timbre_shift,
        reverb_seconds: reverb_seconds.unwrap_or(spec.reverb_seconds),
        ..spec.clone()
    }
}

/// Per-speaker voice: F0 base and formant scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0_hz: f64,
    pub formant_scale: f64,
}

pub fn speaker_voice(spec: &SynthCorpusSpec, speaker: &str) -> Voice {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(&[b"speaker", &spec.seed.to_le_bytes(), speaker.as_bytes()]));
    let spread = spec.speaker_pitch_spread_st;
    let st = if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 };
    let tspread = spec.speaker_timbre_spread;
    let t = if tspread > 0.0 { rng.random_range(-tspread..=tspread) } else { 0.0 };
    Voice {
        f0_hz: spec.base_f0_hz * (st / 12.0 * LN_2).exp() * spec.timbre_shift.exp(),
        formant_scale: (t + spec.timbre_shift).exp(),
    }
}

/// One planned utterance.
#[derive(Debug, Clone)]
pub struct UtterancePlan {
    pub id: String,
    pub speaker: String,
    pub signature: ClassSignature,
    pub voice: Voice,
    pub seed: u64,
}

pub fn plan_corpus(spec: &SynthCorpusSpec) -> Vec<UtterancePlan> {
    let mut out = Vec::with_capacity(spec.n_utterances());
    for speaker in spec.speakers() {
        let voice = speaker_voice(spec, &speaker);
        for sig in &spec.signatures[..spec.n_classes] {
            for i in 0..spec.utterances_per_class_per_speaker {
                let id = format!("{}_{speaker}_{}_{i:02}", spec.name, sig.emotion);
                let seed = stable_hash64(&[b"utterance", &spec.seed.to_le_bytes(), id.as_bytes()]);
                out.push(UtterancePlan {
                    id,
                    speaker: speaker.clone(),
                    signature: sig.clone(),
                    voice,
                    seed,
                });
            }
        }
    }
    out
}

/// Render every utterance to `out_dir/wav/<id>.wav`, write
/// `out_dir/manifest.jsonl` (paths relative to `out_dir`) and
/// `out_dir/spec.json`. The returned manifest carries absolute paths.
pub fn generate_corpus(spec: &SynthCorpusSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("wav"))?;
    let plans = plan_corpus(spec);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(plans.len().max(1));
    let chunk = plans.len().div_ceil(workers).max(1);
    std::thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = plans
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || -> Result<()> {
                    for p in part {
                        let samples = render_utterance(spec, p);
                        write_wav(&AudioBuffer::new(samples, spec.sample_rate), out_dir.join(relative_path(&p.id)))?;
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("synth worker panicked")?;
        }
        Ok(())
    })?;
    let records: Vec<UtteranceRecord> = plans
        .iter()
        .map(|p| UtteranceRecord {
            id: p.id.clone(),
            audio_path: relative_path(&p.id),
            corpus: spec.name.clone(),
            speaker: p.speaker.clone(),
            session: None,
            style: Style::Acted,
            raw_labels: Default::default(),
            emotion: Some(p.signature.emotion),
            augmented: false,
            source_id: None,
        })
        .collect();
    let mut manifest = CorpusManifest::new(spec.name.clone(), records)?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    write_json_pretty(out_dir.join("spec.json"), spec)?;
    manifest.resolve_paths(out_dir);
    Ok(manifest)
}

fn relative_path(id: &str) -> PathBuf {
    PathBuf::from("wav").join(format!("{id}.wav"))
}
