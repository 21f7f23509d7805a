//! Run configuration, read from TOML. Every section is optional and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use bridgevoc_core::{
    BcdConfig, BridgeSchedule, CompressionConfig, DistillWeights, LossWeights, MelFilterbank, SamplerConfig,
    StftConfig,
};
use serde::{Deserialize, Serialize};

use crate::discriminators::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::objectives::{default_mel_resolutions, MelResolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub n_mels: usize,
    pub f_max: f64,
    pub compression: CompressionConfig,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            stft: StftConfig::default(),
            n_mels: 80,
            f_max: 8000.0,
            compression: CompressionConfig::default(),
        }
    }
}

impl AudioConfig {
    pub fn filterbank(&self) -> Result<MelFilterbank> {
        Ok(MelFilterbank::new(self.stft.bins(), self.n_mels, self.sample_rate, self.f_max)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.compression.validate()?;
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// One wav path per line.
    pub manifest: Option<PathBuf>,
    pub batch: usize,
    pub crop_frames: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub steps: u64,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    pub weights: LossWeights,
    pub discriminator: DiscriminatorConfig,
    pub mel_resolutions: Vec<MelResolution>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            batch: 8,
            crop_frames: 128,
            lr: 3e-4,
            adam_betas: (0.8, 0.99),
            weight_decay: 0.01,
            grad_clip: 10.0,
            steps: 1_000_000,
            log_interval: 100,
            checkpoint_interval: 10_000,
            weights: LossWeights::default(),
            discriminator: DiscriminatorConfig::default(),
            mel_resolutions: default_mel_resolutions(80),
        }
    }
}

/// How the student's output is compared with the teacher rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillLossKind {
    /// Omnidirectional loss with each phase channel as (cos, sin).
    #[default]
    Omni,
    /// Omnidirectional loss on the wrapped phase values themselves.
    OmniRaw,
    /// Plain squared complex distance.
    Naive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub teacher_nfe: usize,
    pub lr: f64,
    pub steps: u64,
    pub weights: DistillWeights,
    pub loss: DistillLossKind,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { teacher_nfe: 16, lr: 8e-5, steps: 10_000, weights: DistillWeights::default(), loss: DistillLossKind::Omni }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub audio: AudioConfig,
    pub model: BcdConfig,
    pub schedule: BridgeSchedule,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub distill: DistillConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            audio: AudioConfig::default(),
            model: BcdConfig::default(),
            schedule: BridgeSchedule::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: 128-point STFT at 22.05 kHz (65 bins), 16 Mel
    /// bins, the tiny network and a generator-only objective.
    pub fn tiny() -> Self {
        let n_mels = 16;
        Self {
            audio: AudioConfig {
                sample_rate: 22050,
                stft: StftConfig { window_size: 128, hop: 32, fft_size: 128, ..StftConfig::default() },
                n_mels,
                f_max: 8000.0,
                compression: CompressionConfig::default(),
            },
            model: BcdConfig::tiny(),
            train: TrainConfig {
                batch: 2,
                crop_frames: 64,
                steps: 500,
                log_interval: 10,
                checkpoint_interval: 500,
                weights: LossWeights { gen: 0.0, feat: 0.0, ..LossWeights::default() },
                mel_resolutions: default_mel_resolutions(n_mels),
                ..TrainConfig::default()
            },
            distill: DistillConfig {
                steps: 200,
                weights: DistillWeights { gen: 0.0, feat: 0.0, ..DistillWeights::default() },
                ..DistillConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        self.sampler.validate()?;
        if self.model.spectrum_bins() != self.audio.stft.bins() {
            return Err(Error::Config(format!(
                "network covers {} bins but the STFT has {}",
                self.model.spectrum_bins(),
                self.audio.stft.bins()
            )));
        }
        if self.audio.n_mels >= self.audio.stft.bins() {
            return Err(Error::Config("n_mels must be below the bin count".into()));
        }
        let t = &self.train;
        t.weights.validate()?;
        if !(t.lr > 0.0) || t.batch == 0 || t.log_interval == 0 || t.checkpoint_interval == 0 {
            return Err(Error::Config("lr, batch and intervals must be positive".into()));
        }
        if t.crop_frames < self.model.k_l.max(self.model.max_kernel_t()) {
            return Err(Error::Config(format!(
                "crop of {} frames is shorter than the largest time kernel",
                t.crop_frames
            )));
        }
        if !(0.0..1.0).contains(&t.adam_betas.0) || !(0.0..1.0).contains(&t.adam_betas.1) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if t.mel_resolutions.is_empty() {
            return Err(Error::Config("at least one mel-loss resolution is required".into()));
        }
        if !t.weights.generator_only() {
            t.discriminator.validate()?;
        }
        let d = &self.distill;
        d.weights.validate()?;
        if d.teacher_nfe == 0 || !(d.lr > 0.0) {
            return Err(Error::Config("teacher_nfe and distillation lr must be positive".into()));
        }
        Ok(())
    }

    /// Samples in a training crop.
    pub fn crop_samples(&self) -> usize {
        self.audio.stft.samples_for_frames(self.train.crop_frames)
    }
}
