//! The generator/discriminator training loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use bridgevoc_core::sampler::sample_xt;
use bridgevoc_core::ComplexSpectrum;
use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{make_batch, Batch, Dataset, Featurizer};
use crate::discriminators::{unzip, DiscriminatorBank};
use crate::dsp::{spectra_to_tensor, spectrum_to_wave, TensorStft};
use crate::error::{Error, Result};
use crate::network::Bcd;
use crate::nn::{scalar, Builder, ParamStore};
use crate::noise::{step_rng, GaussianNoise};
use crate::objectives::{adv_disc_loss, adv_gen_loss, data_loss, feat_match_loss, MelLoss};
use crate::optim::{AdamConfig, AdamW};

/// Tensor dtype of training runs.
pub const TRAIN_DTYPE: DType = DType::F32;

/// Component values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub step: u64,
    pub data: f64,
    pub mel: f64,
    pub gen: f64,
    pub feat: f64,
    pub disc: f64,
    pub total: f64,
    pub grad_norm: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,total,data,mel,gen,feat,disc,grad_norm";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step, self.total, self.data, self.mel, self.gen, self.feat, self.disc, self.grad_norm
        )
    }
}

/// Discriminators with their parameters and optimiser.
#[derive(Debug)]
pub struct Critic {
    pub store: ParamStore,
    pub bank: DiscriminatorBank,
    pub opt: AdamW,
}

impl Critic {
    pub fn new(cfg: &RunConfig, rng: &mut ChaCha8Rng, lr: f64) -> Result<Self> {
        let mut store = ParamStore::new(TRAIN_DTYPE);
        let bank = DiscriminatorBank::new(&cfg.train.discriminator, &mut Builder::new(&mut store, rng))?;
        let opt = AdamW::new(adam(cfg, lr), &store)?;
        Ok(Self { store, bank, opt })
    }

    /// One hinge update on real and (detached) generated waves.
    pub fn update(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let (real_scores, _) = unzip(self.bank.forward(real)?);
        let (fake_scores, _) = unzip(self.bank.forward(&fake.detach())?);
        let loss = adv_disc_loss(&real_scores, &fake_scores)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {value}")));
        }
        self.opt.apply(&self.store, &loss.backward()?)?;
        Ok(value)
    }

    /// Generator-side adversarial and feature-matching terms.
    pub fn generator_terms(&self, real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, real_feats) = unzip(self.bank.forward(&real.detach())?);
        let (fake_scores, fake_feats) = unzip(self.bank.forward(fake)?);
        Ok((adv_gen_loss(&fake_scores)?, feat_match_loss(&real_feats, &fake_feats)?))
    }
}

pub(crate) fn adam(cfg: &RunConfig, lr: f64) -> AdamConfig {
    AdamConfig::new(lr, cfg.train.adam_betas, cfg.train.weight_decay, cfg.train.grad_clip)
}

pub(crate) fn waves_tensor(waves: &[Vec<f64>]) -> Result<Tensor> {
    let len = waves.first().map(Vec::len).ok_or_else(|| Error::Invalid("empty batch".into()))?;
    if waves.iter().any(|w| w.len() != len) {
        return Err(Error::Invalid("waveforms of unequal length".into()));
    }
    let flat: Vec<f64> = waves.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (waves.len(), len), &Device::Cpu)?.to_dtype(TRAIN_DTYPE)?)
}

pub(crate) fn stack(specs: &[ComplexSpectrum]) -> Result<Tensor> {
    spectra_to_tensor(&specs.iter().collect::<Vec<_>>(), TRAIN_DTYPE)
}

/// Fixed network inputs for tracking progress without sampling noise: every
/// crop of a batch at every listed time, with noise drawn once.
#[derive(Debug, Clone)]
pub struct Probe {
    pub xt: Tensor,
    pub y: Tensor,
    pub t: Vec<f64>,
    pub x: Tensor,
    pub waves: Tensor,
}

impl Probe {
    pub fn new(cfg: &RunConfig, batch: &Batch, times: &[f64], seed: u64) -> Result<Self> {
        let mut noise = GaussianNoise::seeded(seed);
        let (mut xt, mut y, mut x, mut t, mut waves) = (vec![], vec![], vec![], vec![], vec![]);
        for &time in times {
            for i in 0..batch.len() {
                xt.push(sample_xt(&batch.x[i], &batch.y[i], time, &cfg.schedule, &mut noise)?.x);
                y.push(batch.y[i].clone());
                x.push(batch.x[i].clone());
                t.push(time);
                waves.push(batch.waves[i].clone());
            }
        }
        Ok(Self { xt: stack(&xt)?, y: stack(&y)?, t, x: stack(&x)?, waves: waves_tensor(&waves)? })
    }
}

#[derive(Debug)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub net: Bcd,
    pub opt: AdamW,
    /// Absent when the adversarial weights are zero.
    pub critic: Option<Critic>,
    pub mel_loss: MelLoss,
    pub stft: TensorStft,
    pub featurizer: Featurizer,
    pub step: u64,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new(TRAIN_DTYPE);
        let net = Bcd::new(&cfg.model, &mut Builder::new(&mut store, &mut rng))?;
        let opt = AdamW::new(adam(cfg, cfg.train.lr), &store)?;
        let critic = if cfg.train.weights.generator_only() {
            None
        } else {
            Some(Critic::new(cfg, &mut rng, cfg.train.lr)?)
        };
        let s = &cfg.audio.stft;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            net,
            opt,
            critic,
            mel_loss: MelLoss::new(cfg.audio.sample_rate, &cfg.train.mel_resolutions, TRAIN_DTYPE)?,
            stft: TensorStft::new(s.fft_size, s.hop, s.window_size, TRAIN_DTYPE)?,
            featurizer: Featurizer::new(&cfg.audio)?,
            step: 0,
        })
    }

    /// Restores parameters, optimiser moments and the step counter. The
    /// checkpoint must come from a run with the same configuration apart
    /// from the step budget and logging cadence.
    pub fn resume(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut a = ckpt.config.clone();
        let mut b = cfg.clone();
        for c in [&mut a, &mut b] {
            c.train.steps = 0;
            c.train.log_interval = 1;
            c.train.checkpoint_interval = 1;
            c.train.manifest = None;
        }
        if a != b {
            return Err(Error::Checkpoint("checkpoint was written with a different configuration".into()));
        }
        let mut t = Self::new(cfg)?;
        ckpt.restore_store("gen", &t.store)?;
        ckpt.restore_adam("opt_gen", &mut t.opt, &t.store)?;
        if let Some(c) = t.critic.as_mut() {
            ckpt.restore_store("disc", &c.store)?;
            ckpt.restore_adam("opt_disc", &mut c.opt, &c.store)?;
        }
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(&self.cfg, "teacher", self.step);
        c.put_store("gen", &self.store);
        c.put_adam("opt_gen", &self.opt, &self.store);
        if let Some(critic) = &self.critic {
            c.put_store("disc", &critic.store);
            c.put_adam("opt_disc", &critic.opt, &critic.store);
        }
        c
    }

    /// Generated spectra and waves for network inputs.
    fn predict(&self, xt: &Tensor, y: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor)> {
        let pred = self.net.forward(xt, y, t)?;
        let wave = spectrum_to_wave(&pred, &self.cfg.audio.compression, &self.stft)?;
        Ok((pred, wave))
    }

    /// Mel loss of the current model on a probe.
    pub fn probe_mel_loss(&self, probe: &Probe) -> Result<f64> {
        let (_, wave) = self.predict(&probe.xt, &probe.y, &probe.t)?;
        scalar(&self.mel_loss.forward(&wave.detach(), &probe.waves)?)
    }

    /// One update on `batch`: draws `t` per example and `x_t` from the bridge
    /// marginal, updates the discriminators (when present) and then the
    /// generator.
    pub fn train_step(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<LossReport> {
        let mut noise = GaussianNoise(ChaCha8Rng::seed_from_u64(rng.random()));
        let mut t = Vec::with_capacity(batch.len());
        let mut xt = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let time: f64 = rng.random_range(0.0..1.0);
            xt.push(sample_xt(&batch.x[i], &batch.y[i], time, &self.cfg.schedule, &mut noise)?.x);
            t.push(time);
        }
        let xt = stack(&xt)?;
        let y = stack(&batch.y)?;
        let x = stack(&batch.x)?;
        let real = waves_tensor(&batch.waves)?;
        let (pred, fake) = self.predict(&xt, &y, &t)?;

        let w = self.cfg.train.weights;
        let mut report = LossReport { step: self.step, ..Default::default() };
        let data = data_loss(&pred, &x)?;
        let mel = self.mel_loss.forward(&fake, &real)?;
        let mut total = ((&data * w.data)? + (&mel * w.mel)?)?;
        if let Some(critic) = self.critic.as_mut() {
            report.disc = critic.update(&real, &fake)?;
            let (g, f) = critic.generator_terms(&real, &fake)?;
            report.gen = scalar(&g)?;
            report.feat = scalar(&f)?;
            total = ((total + (g * w.gen)?)? + (f * w.feat)?)?;
        }
        report.data = scalar(&data)?;
        report.mel = scalar(&mel)?;
        report.total = scalar(&total)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at step {}: data {} mel {} gen {} feat {}",
                self.step, report.data, report.mel, report.gen, report.feat
            )));
        }
        report.grad_norm = self.opt.apply(&self.store, &total.backward()?)?;
        self.step += 1;
        Ok(report)
    }

    /// Draws the batch for the current step and trains on it. The step's
    /// randomness depends only on the seed and the step index.
    pub fn step_on(&mut self, data: &Dataset) -> Result<LossReport> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let batch = make_batch(data, &self.featurizer, self.cfg.train.batch, self.cfg.train.crop_frames, &mut rng)?;
        self.train_step(&batch, &mut rng)
    }
}

/// Creates `out` and opens `out/name` for appending, starting a fresh file
/// with `header` when `fresh` or when the file does not exist yet.
pub(crate) fn open_log(out: &Path, name: &str, header: &str, fresh: bool) -> Result<(std::fs::File, PathBuf)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(name);
    let fresh = fresh || !path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    if fresh {
        writeln!(log, "{header}").map_err(|e| Error::io(&path, e))?;
    }
    Ok((log, path))
}

/// Trains until `cfg.train.steps`, appending a CSV row every
/// `log_interval` steps and writing `checkpoint.safetensors` into `out`
/// every `checkpoint_interval` steps and at the end.
pub fn run(trainer: &mut Trainer, data: &Dataset, out: &Path) -> Result<Vec<LossReport>> {
    let (mut log, log_path) = open_log(out, "train_log.csv", LossReport::CSV_HEADER, trainer.step == 0)?;
    let ckpt_path = out.join("checkpoint.safetensors");
    let mut logged = Vec::new();
    while trainer.step < trainer.cfg.train.steps {
        let report = trainer.step_on(data)?;
        if trainer.step % trainer.cfg.train.log_interval == 0 {
            writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io(&log_path, e))?;
            logged.push(report);
        }
        if trainer.step % trainer.cfg.train.checkpoint_interval == 0 {
            trainer.checkpoint().save(&ckpt_path)?;
        }
    }
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(logged)
}
