//! Inference: Mel spectrum to surrogate, reverse bridge sampling, and back
//! to a waveform.

use std::path::Path;

use bridgevoc_core::sampler::sample;
use bridgevoc_core::{
    BridgeSchedule, ComplexSpectrum, Domain, MelSpectrum, NoiseSource, Predictor, SamplerConfig,
};
use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::Featurizer;
use crate::dsp::{spectra_to_tensor, tensor_to_spectra};
use crate::error::{Error, Result};
use crate::network::Bcd;
use crate::nn::{Builder, ParamStore};
use crate::noise::GaussianNoise;
use crate::spectral::istft;

/// Adapts the network to the sampler's per-example predictor interface.
#[derive(Debug)]
pub struct NetPredictor<'a> {
    pub net: &'a Bcd,
    pub dtype: DType,
    /// Number of network evaluations so far.
    pub calls: usize,
}

impl<'a> NetPredictor<'a> {
    pub fn new(net: &'a Bcd, dtype: DType) -> Self {
        Self { net, dtype, calls: 0 }
    }
}

impl Predictor for NetPredictor<'_> {
    type Error = Error;

    fn predict(&mut self, x: &ComplexSpectrum, y: &ComplexSpectrum, t: f64) -> Result<ComplexSpectrum> {
        self.calls += 1;
        let xt = spectra_to_tensor(&[x], self.dtype)?;
        let yt = spectra_to_tensor(&[y], self.dtype)?;
        let out = self.net.forward(&xt, &yt, &[t])?;
        let pred = tensor_to_spectra(&out, Domain::Compressed)?.pop().expect("batch of one");
        Ok(pred.meta_from(x))
    }
}

/// Runs the reverse bridge from `y` with a seeded noise stream.
pub fn generate<P: Predictor<Error = Error>>(
    predictor: &mut P,
    y: &ComplexSpectrum,
    sampler: &SamplerConfig,
    schedule: &BridgeSchedule,
    noise: &mut impl NoiseSource,
) -> Result<ComplexSpectrum> {
    let out = sample(predictor, y, sampler, schedule, noise)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("generated spectrum".into()));
    }
    Ok(out)
}

/// Decompresses and inverts a generated spectrum.
pub fn render(spec: &ComplexSpectrum, feat: &Featurizer) -> Result<Vec<f64>> {
    let mut raw = spec.decompress(&feat.audio.compression)?;
    raw.stft = Some(feat.audio.stft);
    istft(&raw, &feat.audio.stft)
}

/// A trained (or distilled) model ready for synthesis.
#[derive(Debug)]
pub struct Vocoder {
    pub config: RunConfig,
    pub role: String,
    pub store: ParamStore,
    pub net: Bcd,
    pub featurizer: Featurizer,
}

impl Vocoder {
    /// Builds the network for `config` and loads `store` into it.
    pub fn from_store(config: &RunConfig, store: &ParamStore, role: &str) -> Result<Self> {
        let mut own = store.deep_clone()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Bcd::new(&config.model, &mut Builder::bind(&mut own, &mut rng, true))?;
        Ok(Self { config: config.clone(), role: role.into(), store: own, net, featurizer: Featurizer::new(&config.audio)? })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Bcd::new(&ckpt.config.model, &mut Builder::new(&mut store, &mut rng))?;
        ckpt.restore_store("gen", &store)?;
        Self::from_store(&ckpt.config, &store, &ckpt.role)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn mel_of(&self, wave: &[f64], sample_rate: u32) -> Result<MelSpectrum> {
        if sample_rate != self.config.audio.sample_rate {
            return Err(Error::Config(format!(
                "input at {sample_rate} Hz, model expects {} Hz",
                self.config.audio.sample_rate
            )));
        }
        Ok(self.featurizer.analyse(wave)?.mel)
    }

    /// Spectrum generated from a Mel spectrum; `seed` drives the SDE noise.
    pub fn spectrum(
        &self,
        mel: &MelSpectrum,
        sampler: &SamplerConfig,
        schedule: &BridgeSchedule,
        seed: u64,
    ) -> Result<(ComplexSpectrum, usize)> {
        let y = self.featurizer.surrogate(mel)?;
        let mut predictor = NetPredictor::new(&self.net, self.store.dtype());
        let out = generate(&mut predictor, &y, sampler, schedule, &mut GaussianNoise::seeded(seed))?;
        Ok((out, predictor.calls))
    }

    pub fn synthesize(
        &self,
        mel: &MelSpectrum,
        sampler: &SamplerConfig,
        schedule: &BridgeSchedule,
        seed: u64,
    ) -> Result<Vec<f64>> {
        render(&self.spectrum(mel, sampler, schedule, seed)?.0, &self.featurizer)
    }
}
