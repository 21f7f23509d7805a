//! Generator and discriminator objectives.

use bridgevoc_core::mel::triangular_filters;
use candle_core::{DType, Tensor};

use crate::dsp::{TensorMel, TensorStft};
use crate::error::{invalid, Result};

/// Mean squared complex distance of `B x 2 x F x L` spectra, averaged over
/// examples, bins and frames.
pub fn data_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(invalid!("shapes {:?} and {:?} differ", pred.dims(), target.dims()));
    }
    Ok((pred - target)?.sqr()?.sum_keepdim(1)?.mean_all()?)
}

/// (fft size, hop, Mel bins) of one Mel-loss resolution; the window equals
/// the FFT size and filters span `[0, sr / 2]`.
pub type MelResolution = (usize, usize, usize);

/// Resolutions with the middle one at the vocoder's own Mel bin count.
pub fn default_mel_resolutions(n_mels: usize) -> Vec<MelResolution> {
    vec![(512, 128, 40), (1024, 256, n_mels), (2048, 512, 160)]
}

/// Sum over resolutions of the mean absolute log-Mel difference.
#[derive(Debug, Clone)]
pub struct MelLoss {
    mels: Vec<TensorMel>,
}

impl MelLoss {
    pub fn new(sample_rate: u32, resolutions: &[MelResolution], dtype: DType) -> Result<Self> {
        if resolutions.is_empty() {
            return Err(invalid!("mel loss needs at least one resolution"));
        }
        let mels = resolutions
            .iter()
            .map(|&(fft, hop, n_mels)| {
                let filters = triangular_filters(fft / 2 + 1, n_mels, sample_rate, sample_rate as f64 / 2.0)?;
                TensorMel::new(TensorStft::new(fft, hop, fft, dtype)?, &filters, dtype)
            })
            .collect::<Result<_>>()?;
        Ok(Self { mels })
    }

    pub fn mels(&self) -> &[TensorMel] {
        &self.mels
    }

    /// Waveforms `B x T`; the target side carries no gradient.
    pub fn forward(&self, fake: &Tensor, real: &Tensor) -> Result<Tensor> {
        if fake.dims() != real.dims() {
            return Err(invalid!("waveform shapes {:?} and {:?} differ", fake.dims(), real.dims()));
        }
        let real = real.detach();
        let mut total: Option<Tensor> = None;
        for mel in &self.mels {
            let term = (mel.forward(fake)? - mel.forward(&real)?)?.abs()?.mean_all()?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        Ok(total.expect("at least one resolution"))
    }
}

fn mean_over(terms: Vec<Tensor>) -> Result<Tensor> {
    let n = terms.len();
    if n == 0 {
        return Err(invalid!("empty discriminator bank"));
    }
    Ok((Tensor::stack(&terms, 0)?.sum_all()? / n as f64)?)
}

/// Hinge generator loss, `(1/M) Σ_m mean(max(0, 1 - D_m(fake)))`.
pub fn adv_gen_loss(fake_scores: &[Tensor]) -> Result<Tensor> {
    mean_over(
        fake_scores
            .iter()
            .map(|s| Ok(s.affine(-1.0, 1.0)?.relu()?.mean_all()?))
            .collect::<Result<_>>()?,
    )
}

/// Hinge discriminator loss,
/// `(1/M) Σ_m [mean(max(0, 1 - D_m(real))) + mean(max(0, 1 + D_m(fake)))]`.
pub fn adv_disc_loss(real_scores: &[Tensor], fake_scores: &[Tensor]) -> Result<Tensor> {
    if real_scores.len() != fake_scores.len() {
        return Err(invalid!("{} real and {} fake score maps", real_scores.len(), fake_scores.len()));
    }
    mean_over(
        real_scores
            .iter()
            .zip(fake_scores)
            .map(|(r, f)| {
                let real = r.affine(-1.0, 1.0)?.relu()?.mean_all()?;
                let fake = f.affine(1.0, 1.0)?.relu()?.mean_all()?;
                Ok((real + fake)?)
            })
            .collect::<Result<_>>()?,
    )
}

/// Mean absolute feature distance averaged over every intermediate map of
/// every discriminator. Real features carry no gradient.
pub fn feat_match_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() {
        return Err(invalid!("{} real and {} fake feature lists", real.len(), fake.len()));
    }
    let mut terms = Vec::new();
    for (r, f) in real.iter().zip(fake) {
        if r.len() != f.len() {
            return Err(invalid!("feature depth {} vs {}", r.len(), f.len()));
        }
        for (a, b) in r.iter().zip(f) {
            if a.dims() != b.dims() {
                return Err(invalid!("feature shapes {:?} and {:?} differ", a.dims(), b.dims()));
            }
            terms.push((b - a.detach())?.abs()?.mean_all()?);
        }
    }
    mean_over(terms)
}
