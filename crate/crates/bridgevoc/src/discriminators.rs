//! Multi-period and multi-resolution spectrogram discriminators.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::dsp::{reflect_pad, TensorStft};
use crate::error::{invalid, Result};
use crate::nn::{leaky_relu, Builder, Conv1d, Conv2d};

const SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub periods: Vec<usize>,
    /// (fft size, hop, window) per spectrogram discriminator.
    pub resolutions: Vec<(usize, usize, usize)>,
    pub period_channels: Vec<usize>,
    pub resolution_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            periods: vec![2, 3, 5, 7, 11],
            resolutions: vec![(1024, 120, 600), (2048, 240, 1200), (512, 50, 240)],
            period_channels: vec![16, 32, 64, 64],
            resolution_channels: 16,
        }
    }
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = self.periods.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.periods.len() || !self.periods.iter().all(|&p| is_prime(p)) {
            return Err(invalid!("periods {:?} must be distinct primes", self.periods));
        }
        if self.period_channels.is_empty() || self.resolution_channels == 0 {
            return Err(invalid!("discriminator widths must be non-empty"));
        }
        for &(fft, hop, win) in &self.resolutions {
            if hop == 0 || win == 0 || win > fft {
                return Err(invalid!("bad discriminator resolution ({fft}, {hop}, {win})"));
            }
        }
        Ok(())
    }

    /// Number of sub-discriminators `M`.
    pub fn count(&self) -> usize {
        self.periods.len() + self.resolutions.len()
    }

    /// Shortest waveform every sub-discriminator accepts.
    pub fn min_samples(&self) -> usize {
        let p = self.periods.iter().copied().max().unwrap_or(1);
        let w = self.resolutions.iter().map(|r| r.0 / 2 + 1).max().unwrap_or(1);
        p.max(w)
    }
}

/// Output of one sub-discriminator: score map and intermediate activations.
pub type DiscOutput = (Tensor, Vec<Tensor>);

#[derive(Debug, Clone)]
struct PeriodDisc {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDisc {
    /// Reshapes `B x T` to columns of period `p`. The kernels are one sample
    /// wide across the period axis, so each column is an independent 1-D
    /// sequence.
    fn forward(&self, wave: &Tensor) -> Result<DiscOutput> {
        let (b, t) = wave.dims2()?;
        let p = self.period;
        let rem = t % p;
        let x = if rem != 0 { reflect_pad(wave, 0, p - rem)? } else { wave.clone() };
        let rows = x.dim(1)? / p;
        let mut h = x.reshape((b, rows, p))?.transpose(1, 2)?.reshape((b * p, 1, rows))?;
        let mut feats = Vec::with_capacity(self.convs.len());
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let stride = if i == last { 1 } else { 3 };
            h = leaky_relu(&conv.forward_strided(&h, 2, stride)?, SLOPE)?;
            feats.push(h.clone());
        }
        Ok((self.post.forward(&h)?, feats))
    }
}

#[derive(Debug, Clone)]
struct ResolutionDisc {
    stft: TensorStft,
    convs: Vec<Conv2d>,
    post: Conv2d,
}

impl ResolutionDisc {
    fn forward(&self, wave: &Tensor) -> Result<DiscOutput> {
        let mut h = self.stft.magnitude(wave)?.transpose(1, 2)?.unsqueeze(1)?;
        let mut feats = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h)?, SLOPE)?;
            feats.push(h.clone());
        }
        Ok((self.post.forward(&h)?, feats))
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorBank {
    cfg: DiscriminatorConfig,
    periods: Vec<PeriodDisc>,
    resolutions: Vec<ResolutionDisc>,
}

impl DiscriminatorBank {
    pub fn new(cfg: &DiscriminatorConfig, vb: &mut Builder) -> Result<Self> {
        cfg.validate()?;
        let dtype: DType = vb.dtype();
        let mut periods = Vec::new();
        for &p in &cfg.periods {
            let mut v = vb.pp(format!("mpd.{p}"));
            let mut convs = Vec::new();
            let mut inp = 1;
            for (i, &c) in cfg.period_channels.iter().enumerate() {
                convs.push(Conv1d::new(&mut v.pp(format!("conv.{i}")), inp, c, 5)?);
                inp = c;
            }
            periods.push(PeriodDisc { period: p, convs, post: Conv1d::new(&mut v.pp("post"), inp, 1, 3)? });
        }
        let mut resolutions = Vec::new();
        let c = cfg.resolution_channels;
        for (k, &(fft, hop, win)) in cfg.resolutions.iter().enumerate() {
            let mut v = vb.pp(format!("mrd.{k}"));
            let convs = vec![
                Conv2d::new(&mut v.pp("conv.0"), 1, c, (3, 9), (1, 1), (1, 4))?,
                Conv2d::new(&mut v.pp("conv.1"), c, c, (3, 9), (1, 2), (1, 4))?,
                Conv2d::new(&mut v.pp("conv.2"), c, c, (3, 9), (1, 2), (1, 4))?,
                Conv2d::new(&mut v.pp("conv.3"), c, c, (3, 9), (1, 2), (1, 4))?,
                Conv2d::new(&mut v.pp("conv.4"), c, c, (3, 3), (1, 1), (1, 1))?,
            ];
            resolutions.push(ResolutionDisc {
                stft: TensorStft::new(fft, hop, win, dtype)?,
                convs,
                post: Conv2d::new(&mut v.pp("post"), c, 1, (3, 3), (1, 1), (1, 1))?,
            });
        }
        Ok(Self { cfg: cfg.clone(), periods, resolutions })
    }

    pub fn count(&self) -> usize {
        self.cfg.count()
    }

    /// All sub-discriminator outputs, period discriminators first.
    pub fn forward(&self, wave: &Tensor) -> Result<Vec<DiscOutput>> {
        let t = wave.dim(1)?;
        if t < self.cfg.min_samples() {
            return Err(invalid!("waveform of {t} samples is shorter than {}", self.cfg.min_samples()));
        }
        let mut out = Vec::with_capacity(self.count());
        for d in &self.periods {
            out.push(d.forward(wave)?);
        }
        for d in &self.resolutions {
            out.push(d.forward(wave)?);
        }
        Ok(out)
    }
}

/// Splits outputs into score maps and feature lists.
pub fn unzip(outputs: Vec<DiscOutput>) -> (Vec<Tensor>, Vec<Vec<Tensor>>) {
    outputs.into_iter().unzip()
}
