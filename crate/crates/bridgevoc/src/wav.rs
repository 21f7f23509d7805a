//! Mono WAV files, 16-bit PCM or 32-bit float.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    Pcm16,
    #[default]
    Float32,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!("{}: {} channels, expected mono", path.display(), spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format(format!("{}: unsupported encoding {fmt:?} {bits}-bit", path.display())))
        }
    };
    Ok((samples, spec.sample_rate))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Writes `wave` as mono. PCM16 output is clipped to `[-1, 1)`.
pub fn save_wav(path: impl AsRef<Path>, wave: &[f64], sample_rate: u32, encoding: Encoding) -> Result<()> {
    let path = path.as_ref();
    let spec = match encoding {
        Encoding::Pcm16 => WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int },
        Encoding::Float32 => WavSpec { channels: 1, sample_rate, bits_per_sample: 32, sample_format: SampleFormat::Float },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &v in wave {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("sample written to {}", path.display())));
        }
        match encoding {
            Encoding::Pcm16 => writer.write_sample((v * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
            Encoding::Float32 => writer.write_sample(v as f32),
        }
        .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}
