//! Mel filterbank, range-null decomposition and the range-space spectral
//! surrogate used as the degraded endpoint of the bridge.
//!
//! The filterbank `A` (`F_m x F`) maps a magnitude spectrum to the Mel
//! domain. Its pseudo-inverse `A†` projects a Mel observation back onto the
//! range space of `A`; `A†A x` is the part of `x` fixed by the observation and
//! `(I - A†A) x` the part a generative model has to supply.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{Matrix, DEFAULT_RANK_TOL};
use crate::spectrum::{ComplexSpectrum, Domain};

/// Floor applied before the logarithm of Mel energies.
pub const LOG_FLOOR: f64 = 1e-5;

/// HTK Mel scale: `2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    a: Matrix,
    a_pinv: Matrix,
    sample_rate: u32,
    f_max: f64,
}

impl MelFilterbank {
    /// Triangular HTK-scale filters on `[0, f_max]`, unnormalised, for a
    /// spectrum of `bins` frequency bins (`fft_size = 2 (bins - 1)`).
    pub fn new(bins: usize, n_mels: usize, sample_rate: u32, f_max: f64) -> Result<Self> {
        if n_mels == 0 || bins < 2 {
            return Err(invalid!("need at least one mel bin and two frequency bins"));
        }
        if n_mels >= bins {
            return Err(invalid!("{n_mels} mel bins must be fewer than {bins} frequency bins"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(f_max > 0.0 && f_max <= nyquist) {
            return Err(invalid!("f_max {f_max} outside (0, {nyquist}]"));
        }
        let a = triangular_filters(bins, n_mels, sample_rate, f_max)?;
        Self::from_matrix(a, sample_rate, f_max)
    }

    /// Wraps an arbitrary non-negative, full-row-rank compression matrix.
    pub fn from_matrix(a: Matrix, sample_rate: u32, f_max: f64) -> Result<Self> {
        if a.rows() == 0 || a.rows() > a.cols() {
            return Err(invalid!("compression matrix {}x{} is not wide", a.rows(), a.cols()));
        }
        if a.as_slice().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(invalid!("filterbank entries must be finite and non-negative"));
        }
        if let Some(row) = (0..a.rows()).find(|&r| a.row(r).iter().all(|&v| v == 0.0)) {
            return Err(Error::DegenerateFilter(row));
        }
        let rank = a.rank(DEFAULT_RANK_TOL)?;
        if rank != a.rows() {
            return Err(invalid!("filterbank has rank {rank}, expected {}", a.rows()));
        }
        let a_pinv = a.pinv(DEFAULT_RANK_TOL)?;
        Ok(Self { a, a_pinv, sample_rate, f_max })
    }

    /// Rebuilds a filterbank from stored matrices without recomputing `A†`.
    pub fn from_parts(a: Matrix, a_pinv: Matrix, sample_rate: u32, f_max: f64) -> Result<Self> {
        a_pinv.ensure_shape((a.cols(), a.rows()))?;
        Ok(Self { a, a_pinv, sample_rate, f_max })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn pinv(&self) -> &Matrix {
        &self.a_pinv
    }

    pub fn n_mels(&self) -> usize {
        self.a.rows()
    }

    pub fn bins(&self) -> usize {
        self.a.cols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    /// Range-space component `A†A x` of each column of `x`.
    pub fn range_projection(&self, x: &Matrix) -> Result<Matrix> {
        self.a_pinv.matmul(&self.a.matmul(x)?)
    }

    /// Null-space component `(I - A†A) x`.
    pub fn null_projection(&self, x: &Matrix) -> Result<Matrix> {
        x.sub(&self.range_projection(x)?)
    }

    /// `log(max(A |X|, floor))` of a raw spectrum.
    pub fn mel_spectrum(&self, spec: &ComplexSpectrum) -> Result<MelSpectrum> {
        if spec.domain != Domain::Raw {
            return Err(Error::Domain("mel spectrum needs a raw spectrum"));
        }
        if spec.bins() != self.bins() {
            return Err(Error::Shape {
                expected: (self.bins(), spec.frames()),
                got: spec.shape(),
            });
        }
        let energy = self.a.matmul(&spec.magnitude())?;
        Ok(MelSpectrum {
            data: energy.map(|v| libm::log(v.max(LOG_FLOOR))),
            sample_rate: spec.sample_rate,
        })
    }

    /// Range-space spectral surrogate `Y = A† exp(mel)` with all-zero phase.
    ///
    /// Entries of `Y` may be negative; they are kept as real values (phase π)
    /// so that `A Y = exp(mel)` holds exactly.
    pub fn rss_surrogate(&self, mel: &MelSpectrum) -> Result<ComplexSpectrum> {
        if mel.data.rows() != self.n_mels() {
            return Err(Error::Shape {
                expected: (self.n_mels(), mel.data.cols()),
                got: mel.data.shape(),
            });
        }
        let z = mel.data.map(libm::exp);
        let y = self.a_pinv.matmul(&z)?;
        Ok(ComplexSpectrum::from_real(&y, Domain::Raw).with_meta(mel.sample_rate, None))
    }

    /// Filterbank made of a subset of this one's rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::from_matrix(self.a.select_rows(rows), self.sample_rate, self.f_max)
    }
}

/// The bare filter matrix behind [`MelFilterbank::new`], without the
/// pseudo-inverse. Fails on filters that cover no bin.
pub fn triangular_filters(bins: usize, n_mels: usize, sample_rate: u32, f_max: f64) -> Result<Matrix> {
    if n_mels == 0 || bins < 2 {
        return Err(invalid!("need at least one mel bin and two frequency bins"));
    }
    let fft_size = 2 * (bins - 1);
    let mel_max = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut a = Matrix::zeros(n_mels, bins);
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let rise = (f - lo) / (centre - lo);
            let fall = (hi - f) / (hi - centre);
            a[(m, k)] = rise.min(fall).max(0.0);
        }
        if a.row(m).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateFilter(m));
        }
    }
    Ok(a)
}

/// Log-Mel spectrum, `F_m x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrum {
    pub data: Matrix,
    pub sample_rate: u32,
}

impl MelSpectrum {
    pub fn new(data: Matrix, sample_rate: u32) -> Result<Self> {
        if !data.is_finite() {
            return Err(Error::NonFinite("mel spectrum"));
        }
        Ok(Self { data, sample_rate })
    }

    pub fn n_mels(&self) -> usize {
        self.data.rows()
    }

    pub fn frames(&self) -> usize {
        self.data.cols()
    }
}

/// `rank(|Y|) - rank(|X|)`.
pub fn rank_difference(y_mag: &Matrix, x_mag: &Matrix, tol: f64) -> Result<i64> {
    y_mag.ensure_shape(x_mag.shape())?;
    Ok(y_mag.rank(tol)? as i64 - x_mag.rank(tol)? as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn identity_bank(n: usize) -> MelFilterbank {
        MelFilterbank::from_matrix(Matrix::identity(n), 16000, 8000.0).unwrap()
    }

    #[test]
    fn htk_scale_roundtrip() {
        for hz in [0.0, 440.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * libm::log10(2.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_too_many_mels_and_bad_fmax() {
        assert!(MelFilterbank::new(65, 65, 16000, 8000.0).is_err());
        assert!(MelFilterbank::new(513, 80, 22050, 12000.0).is_err());
    }

    #[test]
    fn degenerate_filter_is_reported() {
        // more filters than bins below f_max: some filter has to fall between bins
        let err = MelFilterbank::new(9, 8, 16000, 8000.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateFilter(_) | Error::Invalid(_)), "{err:?}");
    }

    #[test]
    fn identity_shim() {
        let fb = identity_bank(4);
        assert!(fb.pinv().max_abs_diff(&Matrix::identity(4)).unwrap() < 1e-15);

        let mags = [1.0, 2.0, 0.5, 3.0];
        let spec = ComplexSpectrum::new(
            4,
            1,
            mags.iter().map(|&m| Complex64::from_polar(m, 0.3)).collect(),
            Domain::Raw,
        )
        .unwrap();
        let mel = fb.mel_spectrum(&spec).unwrap();
        for (i, m) in mags.iter().enumerate() {
            assert!((mel.data[(i, 0)] - libm::log(*m)).abs() < 1e-12);
        }
        let y = fb.rss_surrogate(&mel).unwrap();
        for (i, m) in mags.iter().enumerate() {
            assert!((y.get(i, 0).re - m).abs() < 1e-12);
            assert_eq!(y.get(i, 0).im, 0.0);
        }
    }

    #[test]
    fn zero_spectrum_hits_the_floor() {
        let fb = MelFilterbank::new(65, 16, 16000, 8000.0).unwrap();
        let mel = fb.mel_spectrum(&ComplexSpectrum::zeros(65, 3, Domain::Raw)).unwrap();
        assert!(mel.data.as_slice().iter().all(|&v| v == libm::log(LOG_FLOOR)));
    }

    #[test]
    fn mel_rejects_compressed_and_mismatched() {
        let fb = MelFilterbank::new(65, 16, 16000, 8000.0).unwrap();
        let comp = ComplexSpectrum::zeros(65, 2, Domain::Compressed);
        assert!(matches!(fb.mel_spectrum(&comp), Err(Error::Domain(_))));
        let wrong = ComplexSpectrum::zeros(64, 2, Domain::Raw);
        assert!(matches!(fb.mel_spectrum(&wrong), Err(Error::Shape { .. })));
        let bad_mel = MelSpectrum { data: Matrix::zeros(15, 2), sample_rate: 16000 };
        assert!(fb.rss_surrogate(&bad_mel).is_err());
    }

    #[test]
    fn rank_difference_examples() {
        let x = Matrix::from_fn(6, 5, |r, c| ((r * 7 + c * 3) % 5) as f64 + (r == c) as u8 as f64);
        assert_eq!(rank_difference(&x, &x, DEFAULT_RANK_TOL).unwrap(), 0);
        let r1 = Matrix::from_fn(6, 5, |r, c| (r + 1) as f64 * (c + 1) as f64);
        let r1b = Matrix::from_fn(6, 5, |r, c| (2 * r + 1) as f64 * (c + 3) as f64);
        assert_eq!(rank_difference(&r1, &r1b, DEFAULT_RANK_TOL).unwrap(), 0);
        assert!(rank_difference(&x, &Matrix::zeros(5, 5), DEFAULT_RANK_TOL).is_err());
    }
}
