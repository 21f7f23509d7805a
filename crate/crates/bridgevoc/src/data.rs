//! Manifests, feature extraction and training batches.

use std::path::{Path, PathBuf};

use bridgevoc_core::{ComplexSpectrum, MelFilterbank, MelSpectrum};
use rand::Rng;

use crate::config::AudioConfig;
use crate::error::{Error, Result};
use crate::spectral::{reflect_pad, stft};
use crate::wav::load_wav;

/// Wav files listed one per line. Blank lines and `#` comments are skipped;
/// a second whitespace-separated column is kept as a split tag. Relative
/// paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, Option<String>)>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let path = PathBuf::from(cols.next().expect("non-empty line"));
            let path = if path.is_relative() { base.join(path) } else { path };
            entries.push((path, cols.next().map(str::to_owned)));
        }
        if entries.is_empty() {
            return Err(Error::Config("manifest lists no files".into()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_paths(paths: impl IntoIterator<Item = PathBuf>) -> Result<Self> {
        let entries: Vec<_> = paths.into_iter().map(|p| (p, None)).collect();
        if entries.is_empty() {
            return Err(Error::Config("manifest lists no files".into()));
        }
        Ok(Self { entries })
    }

    /// Entries carrying `tag`, or all entries when `tag` is `None`.
    pub fn split(&self, tag: Option<&str>) -> Result<Self> {
        let entries: Vec<_> =
            self.entries.iter().filter(|(_, t)| tag.is_none() || t.as_deref() == tag).cloned().collect();
        if entries.is_empty() {
            return Err(Error::Config(format!("no manifest entries tagged {tag:?}")));
        }
        Ok(Self { entries })
    }
}

/// Decoded clips of one manifest, all at the configured rate.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clips: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Dataset {
    pub fn load(manifest: &Manifest, sample_rate: u32) -> Result<Self> {
        let mut clips = Vec::with_capacity(manifest.entries.len());
        for (path, _) in &manifest.entries {
            let (wave, sr) = load_wav(path)?;
            if sr != sample_rate {
                return Err(Error::Format(format!("{}: {sr} Hz, expected {sample_rate} Hz", path.display())));
            }
            if wave.is_empty() {
                return Err(Error::Format(format!("{}: empty clip", path.display())));
            }
            clips.push(wave);
        }
        Ok(Self { clips, sample_rate })
    }

    pub fn from_clips(clips: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if clips.is_empty() || clips.iter().any(Vec::is_empty) {
            return Err(Error::Config("dataset needs at least one non-empty clip".into()));
        }
        Ok(Self { clips, sample_rate })
    }
}

/// Computes the clean spectrum, the Mel spectrum and the range-space
/// surrogate of a waveform.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub audio: AudioConfig,
    pub filterbank: MelFilterbank,
}

/// Features of one segment.
#[derive(Debug, Clone)]
pub struct Features {
    /// Compressed clean spectrum.
    pub x: ComplexSpectrum,
    /// Compressed surrogate.
    pub y: ComplexSpectrum,
    pub mel: MelSpectrum,
}

impl Featurizer {
    pub fn new(audio: &AudioConfig) -> Result<Self> {
        audio.validate()?;
        Ok(Self { audio: audio.clone(), filterbank: audio.filterbank()? })
    }

    pub fn analyse(&self, wave: &[f64]) -> Result<Features> {
        let raw = stft(wave, &self.audio.stft, self.audio.sample_rate)?;
        let mel = self.filterbank.mel_spectrum(&raw)?;
        let x = raw.compress(&self.audio.compression)?;
        let y = self.surrogate(&mel)?;
        Ok(Features { x, y, mel })
    }

    /// Compressed surrogate of a Mel spectrum.
    pub fn surrogate(&self, mel: &MelSpectrum) -> Result<ComplexSpectrum> {
        if mel.sample_rate != self.audio.sample_rate {
            return Err(Error::Config(format!(
                "mel at {} Hz, model expects {} Hz",
                mel.sample_rate, self.audio.sample_rate
            )));
        }
        let y = self.filterbank.rss_surrogate(mel)?.with_meta(self.audio.sample_rate, Some(self.audio.stft));
        Ok(y.compress(&self.audio.compression)?)
    }
}

/// Host-side batch; spectra are compressed.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Vec<ComplexSpectrum>,
    pub y: Vec<ComplexSpectrum>,
    pub mel: Vec<MelSpectrum>,
    pub waves: Vec<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn from_segments(feat: &Featurizer, waves: Vec<Vec<f64>>) -> Result<Self> {
        let mut b = Batch { x: Vec::new(), y: Vec::new(), mel: Vec::new(), waves: Vec::new() };
        for w in waves {
            let f = feat.analyse(&w)?;
            b.x.push(f.x);
            b.y.push(f.y);
            b.mel.push(f.mel);
            b.waves.push(w);
        }
        Ok(b)
    }
}

/// Extends a clip to at least `len` samples by repeated reflection.
pub fn pad_to(clip: &[f64], len: usize) -> Result<Vec<f64>> {
    let mut out = clip.to_vec();
    while out.len() < len {
        if out.len() == 1 {
            out.resize(len, out[0]);
            break;
        }
        let extra = (len - out.len()).min(out.len() - 1);
        out = reflect_pad(&out, 0, extra)?;
    }
    Ok(out)
}

/// A `len`-sample segment at a uniformly random offset; shorter clips are
/// reflect-padded.
pub fn random_crop(clip: &[f64], len: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let clip = pad_to(clip, len)?;
    let start = rng.random_range(0..=clip.len() - len);
    Ok(clip[start..start + len].to_vec())
}

/// `batch` random crops of `crop_frames` frames from randomly chosen clips.
pub fn make_batch(
    data: &Dataset,
    feat: &Featurizer,
    batch: usize,
    crop_frames: usize,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let len = feat.audio.stft.samples_for_frames(crop_frames);
    let waves = (0..batch)
        .map(|_| {
            let clip = &data.clips[rng.random_range(0..data.clips.len())];
            random_crop(clip, len, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Batch::from_segments(feat, waves)
}
