use std::io::{BufReader, Read};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, AudioError, Result};
use crate::util::temp_path_for;

const PCM16_SCALE: f32 = 32768.0;

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::FormatError(msg) => AudioError::MalformedHeader(msg.to_string()),
        hound::Error::Unsupported => {
            AudioError::UnsupportedEncoding("compressed or unknown format tag".into())
        }
        hound::Error::InvalidSampleFormat => {
            AudioError::UnsupportedEncoding("invalid sample format".into())
        }
        other @ (hound::Error::TooWide | hound::Error::UnfinishedSample) => {
            AudioError::MalformedHeader(other.to_string())
        }
    }
}

/// Read a RIFF/WAVE file (PCM16 or float32, any channel count) as mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let file = std::fs::File::open(path.as_ref())?;
    decode(BufReader::new(file))
}

fn decode<R: Read>(reader: R) -> Result<AudioBuffer> {
    let mut reader = WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::MalformedHeader("zero channels".into()));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::MalformedHeader("zero sample rate".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    let channels = spec.channels as usize;
    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

#[inline]
fn quantize(sample: f32) -> i16 {
    (sample as f64 * PCM16_SCALE as f64)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Write a mono PCM16 little-endian file. The file appears atomically.
pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    if buffer.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = temp_path_for(path);
    {
        let mut writer = WavWriter::create(&tmp, spec).map_err(map_hound)?;
        for &s in &buffer.samples {
            writer.write_sample(quantize(s)).map_err(map_hound)?;
        }
        writer.finalize().map_err(map_hound)?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
