//! Complex time-frequency containers and power-law spectral compression.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// Analysis window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Window {
    /// Periodic Hann, `0.5 - 0.5 cos(2πn/N)`.
    #[default]
    PeriodicHann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::PeriodicHann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * n as f64 / len as f64)
                })
                .collect(),
        }
    }
}

/// Framing of the main analysis STFT: centred frames, reflect padding,
/// `1 + len / hop` frames for a signal of `len` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub fft_size: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_size: 1024, hop: 256, fft_size: 1024, window: Window::PeriodicHann }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, fft_size: usize) -> Result<Self> {
        let cfg = Self { window_size, hop: window_size / 4, fft_size, window: Window::PeriodicHann };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.hop == 0 {
            return Err(invalid!("window size and hop must be positive"));
        }
        if self.hop * 4 != self.window_size {
            return Err(invalid!(
                "hop {} must be a quarter of the window size {}",
                self.hop,
                self.window_size
            ));
        }
        if self.fft_size < self.window_size {
            return Err(invalid!(
                "fft size {} is smaller than the window {}",
                self.fft_size,
                self.window_size
            ));
        }
        Ok(())
    }

    /// Number of frequency bins `F = fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count `L` for a signal of `len` samples.
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Signal length that yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        frames.saturating_sub(1) * self.hop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Raw,
    Compressed,
}

/// `entry -> gain * |entry|^exponent * e^{i arg(entry)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CompressionConfig {
    pub exponent: f64,
    pub gain: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { exponent: 0.5, gain: 0.33 }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.0 && self.exponent <= 1.0) {
            return Err(invalid!("compression exponent {} outside (0, 1]", self.exponent));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(invalid!("compression gain {} must be positive", self.gain));
        }
        Ok(())
    }

    /// Compresses one entry. Real negative entries keep their sign (phase π).
    pub fn compress_value(&self, z: Complex64) -> Complex64 {
        let mag = z.norm();
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        z * (self.gain * libm::pow(mag, self.exponent - 1.0))
    }

    pub fn decompress_value(&self, c: Complex64) -> Complex64 {
        let mag = c.norm();
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let raw_mag = libm::pow(mag / self.gain, 1.0 / self.exponent);
        c * (raw_mag / mag)
    }
}

/// Complex `F x L` spectrum stored row-major (`data[f * frames + l]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    pub domain: Domain,
    pub sample_rate: u32,
    /// Analysis configuration the spectrum came from, when known.
    pub stft: Option<StftConfig>,
}

impl ComplexSpectrum {
    pub fn new(bins: usize, frames: usize, data: Vec<Complex64>, domain: Domain) -> Result<Self> {
        if data.len() != bins * frames {
            return Err(invalid!(
                "{} entries do not fill a {bins}x{frames} spectrum",
                data.len()
            ));
        }
        Ok(Self { bins, frames, data, domain, sample_rate: 0, stft: None })
    }

    pub fn zeros(bins: usize, frames: usize, domain: Domain) -> Self {
        Self {
            bins,
            frames,
            data: vec![Complex64::new(0.0, 0.0); bins * frames],
            domain,
            sample_rate: 0,
            stft: None,
        }
    }

    /// Real-valued spectrum (zero phase, or phase π for negative entries).
    pub fn from_real(m: &Matrix, domain: Domain) -> Self {
        let data = m.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self { bins: m.rows(), frames: m.cols(), data, domain, sample_rate: 0, stft: None }
    }

    pub fn with_meta(mut self, sample_rate: u32, stft: Option<StftConfig>) -> Self {
        self.sample_rate = sample_rate;
        self.stft = stft;
        self
    }

    /// Copies sample rate and analysis configuration from `other`.
    pub fn meta_from(mut self, other: &ComplexSpectrum) -> Self {
        self.sample_rate = other.sample_rate;
        self.stft = other.stft;
        self
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, f: usize, l: usize) -> Complex64 {
        self.data[f * self.frames + l]
    }

    pub fn set(&mut self, f: usize, l: usize, v: Complex64) {
        self.data[f * self.frames + l] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &ComplexSpectrum) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape { expected: self.shape(), got: other.shape() });
        }
        Ok(())
    }

    pub fn magnitude(&self) -> Matrix {
        Matrix::from_vec(self.bins, self.frames, self.data.iter().map(|z| z.norm()).collect())
            .expect("shape is consistent")
    }

    /// Phase in `(-π, π]`.
    pub fn phase(&self) -> Matrix {
        Matrix::from_vec(self.bins, self.frames, self.data.iter().map(|z| z.arg()).collect())
            .expect("shape is consistent")
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self { data: self.data.iter().map(|&z| f(z)).collect(), ..self.clone() }
    }

    /// `a * self + b * other`, keeping the metadata of `self`.
    pub fn combine(&self, a: f64, other: &ComplexSpectrum, b: f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&x, &y)| x * a + y * b).collect();
        Ok(Self { data, ..self.clone() })
    }

    pub fn max_abs_diff(&self, other: &ComplexSpectrum) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    pub fn compress(&self, c: &CompressionConfig) -> Result<Self> {
        c.validate()?;
        if self.domain != Domain::Raw {
            return Err(Error::Domain("spectrum is already compressed"));
        }
        let mut out = self.map(|z| c.compress_value(z));
        out.domain = Domain::Compressed;
        Ok(out)
    }

    pub fn decompress(&self, c: &CompressionConfig) -> Result<Self> {
        c.validate()?;
        if self.domain != Domain::Compressed {
            return Err(Error::Domain("spectrum is not compressed"));
        }
        let mut out = self.map(|z| c.decompress_value(z));
        out.domain = Domain::Raw;
        Ok(out)
    }
}
