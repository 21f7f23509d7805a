//! Differentiable spectral operations on batched tensors.
//!
//! Spectra travel as `B x 2 x F x L` tensors (real and imaginary planes);
//! waveforms as `B x T`.

use bridgevoc_core::spectrum::{ComplexSpectrum, CompressionConfig, Domain, Window};
use bridgevoc_core::{Complex64, Matrix};
use candle_core::{DType, Device, Tensor};

use crate::error::{invalid, Result};
use crate::spectral::padded_window;

/// Added under square roots of power so gradients stay finite at zero.
pub const POWER_EPS: f64 = 1e-9;

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period.max(1));
    if j >= n {
        j = period - j;
    }
    j as usize
}

fn index(idx: Vec<u32>, device: &Device) -> Result<Tensor> {
    let n = idx.len();
    Ok(Tensor::from_vec(idx, n, device)?)
}

/// Reflect-pads the last axis of a `B x T` tensor.
pub fn reflect_pad(x: &Tensor, left: usize, right: usize) -> Result<Tensor> {
    let n = x.dim(1)?;
    if left >= n || right >= n {
        return Err(invalid!("signal of {n} samples is too short to reflect-pad by {}", left.max(right)));
    }
    let idx = (0..n + left + right).map(|i| reflect(i as isize - left as isize, n) as u32).collect();
    Ok(x.contiguous()?.index_select(&index(idx, x.device())?, 1)?)
}

/// STFT and inverse STFT as tensor ops (DFT by matrix product), matching
/// [`crate::spectral::StftEngine`] framing.
#[derive(Debug, Clone)]
pub struct TensorStft {
    fft_size: usize,
    hop: usize,
    window: Tensor,
    cos: Tensor,
    sin: Tensor,
    icos: Tensor,
    isin: Tensor,
}

impl TensorStft {
    pub fn new(fft_size: usize, hop: usize, win_len: usize, dtype: DType) -> Result<Self> {
        if fft_size < 2 || hop == 0 || win_len == 0 || win_len > fft_size {
            return Err(invalid!("bad stft geometry fft {fft_size} hop {hop} window {win_len}"));
        }
        let dev = Device::Cpu;
        let bins = fft_size / 2 + 1;
        let n = fft_size as f64;
        let mut cos = vec![0.0; fft_size * bins];
        let mut sin = vec![0.0; fft_size * bins];
        let mut icos = vec![0.0; bins * fft_size];
        let mut isin = vec![0.0; bins * fft_size];
        for t in 0..fft_size {
            for k in 0..bins {
                let ang = 2.0 * std::f64::consts::PI * ((k * t) % fft_size) as f64 / n;
                cos[t * bins + k] = ang.cos();
                sin[t * bins + k] = -ang.sin();
                let weight = if k == 0 || 2 * k == fft_size { 1.0 } else { 2.0 };
                icos[k * fft_size + t] = weight * ang.cos() / n;
                isin[k * fft_size + t] = -weight * ang.sin() / n;
            }
        }
        let t = |v: Vec<f64>, r: usize, c: usize| -> Result<Tensor> {
            Ok(Tensor::from_vec(v, (r, c), &dev)?.to_dtype(dtype)?)
        };
        Ok(Self {
            fft_size,
            hop,
            window: Tensor::from_vec(padded_window(Window::PeriodicHann, win_len, fft_size), fft_size, &dev)?
                .to_dtype(dtype)?,
            cos: t(cos, fft_size, bins)?,
            sin: t(sin, fft_size, bins)?,
            icos: t(icos, bins, fft_size)?,
            isin: t(isin, bins, fft_size)?,
        })
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// `B x T -> (re, im)`, each `B x F x L`.
    pub fn forward(&self, wave: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, len) = wave.dims2()?;
        let pad = self.fft_size / 2;
        let padded = reflect_pad(wave, pad, pad)?;
        let frames = self.frames(len);
        let idx = (0..frames)
            .flat_map(|l| (0..self.fft_size).map(move |n| (l * self.hop + n) as u32))
            .collect();
        let framed = padded
            .index_select(&index(idx, wave.device())?, 1)?
            .reshape((b, frames, self.fft_size))?
            .broadcast_mul(&self.window)?;
        let re = framed.broadcast_matmul(&self.cos)?.transpose(1, 2)?;
        let im = framed.broadcast_matmul(&self.sin)?.transpose(1, 2)?;
        Ok((re, im))
    }

    /// `B x F x L` magnitudes, `sqrt(re² + im² + POWER_EPS)`.
    pub fn magnitude(&self, wave: &Tensor) -> Result<Tensor> {
        let (re, im) = self.forward(wave)?;
        Ok(((re.sqr()? + im.sqr()?)? + POWER_EPS)?.sqrt()?)
    }

    /// `(re, im)` of shape `B x F x L` to `B x (L - 1) hop` samples.
    pub fn inverse(&self, re: &Tensor, im: &Tensor) -> Result<Tensor> {
        let (b, bins, frames) = re.dims3()?;
        if bins != self.bins() || frames == 0 {
            return Err(invalid!("{bins} bins do not match fft size {}", self.fft_size));
        }
        let n = self.fft_size;
        let segs = (re.transpose(1, 2)?.broadcast_matmul(&self.icos)?
            + im.transpose(1, 2)?.broadcast_matmul(&self.isin)?)?
        .broadcast_mul(&self.window)?
        .reshape((b, frames * n))?;
        let total = n + (frames - 1) * self.hop;
        let idx = (0..frames).flat_map(|l| (0..n).map(move |k| (l * self.hop + k) as u32)).collect();
        let acc = Tensor::zeros((b, total), re.dtype(), re.device())?.index_add(
            &index(idx, re.device())?,
            &segs,
            1,
        )?;
        let win = self.window.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let mut env = vec![0.0; total];
        for l in 0..frames {
            for k in 0..n {
                env[l * self.hop + k] += win[k] * win[k];
            }
        }
        let inv: Vec<f64> = env.iter().map(|&e| if e > 1e-11 { 1.0 / e } else { 0.0 }).collect();
        let inv = Tensor::from_vec(inv, total, re.device())?.to_dtype(re.dtype())?;
        let pad = n / 2;
        let len = (frames - 1) * self.hop;
        Ok(acc.broadcast_mul(&inv)?.narrow(1, pad, len)?)
    }
}

/// Tensor form of the power-law decompression, `B x 2 x F x L` in and out.
pub fn decompress(x: &Tensor, c: &CompressionConfig) -> Result<Tensor> {
    c.validate()?;
    let re = x.narrow(1, 0, 1)?;
    let im = x.narrow(1, 1, 1)?;
    let power = ((re.sqr()? + im.sqr()?)? + 1e-12)?;
    let e = 1.0 / c.exponent;
    let factor = power.powf((e - 1.0) / 2.0)?.affine(c.gain.powf(-e), 0.0)?;
    Ok(x.broadcast_mul(&factor)?)
}

/// Decompresses `B x 2 x F x L` and inverts the STFT.
pub fn spectrum_to_wave(x: &Tensor, c: &CompressionConfig, stft: &TensorStft) -> Result<Tensor> {
    let raw = decompress(x, c)?;
    let re = raw.narrow(1, 0, 1)?.squeeze(1)?;
    let im = raw.narrow(1, 1, 1)?.squeeze(1)?;
    stft.inverse(&re, &im)
}

/// Log-Mel of `B x T` waveforms: `log(max(A |STFT|, floor))`, `B x F_m x L`.
#[derive(Debug, Clone)]
pub struct TensorMel {
    stft: TensorStft,
    filters: Tensor,
}

impl TensorMel {
    pub fn new(stft: TensorStft, filters: &Matrix, dtype: DType) -> Result<Self> {
        if filters.cols() != stft.bins() {
            return Err(invalid!("filterbank has {} columns for {} bins", filters.cols(), stft.bins()));
        }
        let filters = Tensor::from_slice(filters.as_slice(), filters.shape(), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(Self { stft, filters })
    }

    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        let mag = self.stft.magnitude(wave)?;
        Ok(self.filters.broadcast_matmul(&mag)?.maximum(bridgevoc_core::mel::LOG_FLOOR)?.log()?)
    }
}

/// Stacks spectra into `B x 2 x F x L`.
pub fn spectra_to_tensor(specs: &[&ComplexSpectrum], dtype: DType) -> Result<Tensor> {
    let first = specs.first().ok_or_else(|| invalid!("empty batch"))?;
    let (f, l) = first.shape();
    let mut data = Vec::with_capacity(specs.len() * 2 * f * l);
    for s in specs {
        s.ensure_same_shape(first)?;
        data.extend(s.data().iter().map(|z| z.re));
        data.extend(s.data().iter().map(|z| z.im));
    }
    Ok(Tensor::from_vec(data, (specs.len(), 2, f, l), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of [`spectra_to_tensor`].
pub fn tensor_to_spectra(x: &Tensor, domain: Domain) -> Result<Vec<ComplexSpectrum>> {
    let (b, two, f, l) = x.dims4()?;
    if two != 2 {
        return Err(invalid!("expected two planes, got {two}"));
    }
    let v = x.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    (0..b)
        .map(|i| {
            let base = i * 2 * f * l;
            let data = (0..f * l).map(|k| Complex64::new(v[base + k], v[base + f * l + k])).collect();
            Ok(ComplexSpectrum::new(f, l, data, domain)?)
        })
        .collect()
}
