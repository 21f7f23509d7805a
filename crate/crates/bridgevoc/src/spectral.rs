//! Host-side STFT and inverse STFT on `f64` samples.

use std::sync::Arc;

use bridgevoc_core::spectrum::{ComplexSpectrum, Domain, StftConfig, Window};
use bridgevoc_core::{Complex64, Matrix};
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Centred, reflect-padded STFT with a periodic Hann window of `win_len`
/// samples zero-padded to `fft_size`.
#[derive(Clone)]
pub struct StftEngine {
    fft_size: usize,
    hop: usize,
    win_len: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine")
            .field("fft_size", &self.fft_size)
            .field("hop", &self.hop)
            .field("win_len", &self.win_len)
            .finish()
    }
}

/// Window of `win_len` taps centred in a frame of `fft_size` samples.
pub fn padded_window(window: Window, win_len: usize, fft_size: usize) -> Vec<f64> {
    let mut out = vec![0.0; fft_size];
    let offset = (fft_size - win_len) / 2;
    out[offset..offset + win_len].copy_from_slice(&window.coefficients(win_len));
    out
}

/// Mirrors `x` about its end samples (the edge sample is not repeated).
pub fn reflect_pad(x: &[f64], left: usize, right: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if left >= n || right >= n {
        return Err(invalid!("signal of {n} samples is too short to reflect-pad by {}", left.max(right)));
    }
    let mut out = Vec::with_capacity(n + left + right);
    out.extend((1..=left).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=right).map(|i| x[n - 1 - i]));
    Ok(out)
}

impl StftEngine {
    pub fn new(fft_size: usize, hop: usize, win_len: usize) -> Result<Self> {
        if fft_size < 2 || hop == 0 || win_len == 0 || win_len > fft_size {
            return Err(invalid!("bad stft geometry fft {fft_size} hop {hop} window {win_len}"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft_size,
            hop,
            win_len,
            window: padded_window(Window::PeriodicHann, win_len, fft_size),
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn from_config(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg.fft_size, cfg.hop, cfg.window_size)
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Row-major `bins x frames` coefficients.
    pub fn forward(&self, wave: &[f64]) -> Result<Vec<Complex64>> {
        if wave.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform".into()));
        }
        let pad = self.fft_size / 2;
        let padded = reflect_pad(wave, pad, pad)?;
        let (bins, frames) = (self.bins(), self.frames(wave.len()));
        let mut out = vec![Complex64::new(0.0, 0.0); bins * frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_size];
        for l in 0..frames {
            let start = l * self.hop;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + n] * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for f in 0..bins {
                out[f * frames + l] = buf[f];
            }
        }
        Ok(out)
    }

    /// Weighted overlap-add inverse; returns `(frames - 1) * hop` samples.
    pub fn inverse(&self, data: &[Complex64], frames: usize) -> Result<Vec<f64>> {
        let bins = self.bins();
        if data.len() != bins * frames || frames == 0 {
            return Err(invalid!("{} coefficients do not form {bins} x {frames}", data.len()));
        }
        let n = self.fft_size;
        let total = n + (frames - 1) * self.hop;
        let mut acc = vec![0.0; total];
        let mut env = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for l in 0..frames {
            for f in 0..bins {
                buf[f] = data[f * frames + l];
            }
            for f in bins..n {
                buf[f] = buf[n - f].conj();
            }
            self.inverse.process(&mut buf);
            let start = l * self.hop;
            for k in 0..n {
                acc[start + k] += buf[k].re / n as f64 * self.window[k];
                env[start + k] += self.window[k] * self.window[k];
            }
        }
        let pad = n / 2;
        let len = (frames - 1) * self.hop;
        Ok((pad..pad + len).map(|i| if env[i] > 1e-11 { acc[i] / env[i] } else { 0.0 }).collect())
    }

    /// `bins x frames` magnitudes.
    pub fn magnitude(&self, wave: &[f64]) -> Result<Matrix> {
        let frames = self.frames(wave.len());
        let data = self.forward(wave)?;
        Matrix::from_vec(self.bins(), frames, data.iter().map(|z| z.norm()).collect()).map_err(Error::from)
    }
}

/// Raw-domain analysis of `wave` at `cfg`.
pub fn stft(wave: &[f64], cfg: &StftConfig, sample_rate: u32) -> Result<ComplexSpectrum> {
    if wave.len() < cfg.window_size {
        return Err(invalid!("waveform of {} samples is shorter than the {}-sample window", wave.len(), cfg.window_size));
    }
    let engine = StftEngine::from_config(cfg)?;
    let frames = engine.frames(wave.len());
    let data = engine.forward(wave)?;
    Ok(ComplexSpectrum::new(engine.bins(), frames, data, Domain::Raw)?.with_meta(sample_rate, Some(*cfg)))
}

pub fn istft(spec: &ComplexSpectrum, cfg: &StftConfig) -> Result<Vec<f64>> {
    if spec.domain != Domain::Raw {
        return Err(bridgevoc_core::Error::Domain("inverse STFT needs a raw-domain spectrum").into());
    }
    if let Some(own) = spec.stft {
        if own != *cfg {
            return Err(invalid!("spectrum was analysed with {own:?}, not {cfg:?}"));
        }
    }
    if spec.bins() != cfg.bins() {
        return Err(invalid!("{} bins do not match fft size {}", spec.bins(), cfg.fft_size));
    }
    StftEngine::from_config(cfg)?.inverse(spec.data(), spec.frames())
}
