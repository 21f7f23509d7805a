//! AdamW with decoupled weight decay and global-norm clipping.

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{scalar, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient norm above which gradients are rescaled.
    pub clip: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64, clip: f64) -> Self {
        Self { lr, betas, eps: 1e-8, weight_decay, clip: (clip > 0.0).then_some(clip) }
    }
}

/// Optimiser state for one [`ParamStore`]; moments follow the store's
/// parameter order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Result<Self> {
        let mut m = Vec::with_capacity(store.len());
        for p in store.params() {
            m.push(p.var.as_tensor().zeros_like()?);
        }
        let v = m.clone();
        Ok(Self { cfg, step: 0, m, v })
    }

    /// Applies one update from `grads`; parameters without a gradient are
    /// left untouched. Returns the gradient norm before clipping. All
    /// arithmetic runs on detached tensors so the moments hold no graph.
    pub fn apply(&mut self, store: &ParamStore, grads: &GradStore) -> Result<f64> {
        let params = store.params();
        if params.len() != self.m.len() {
            return Err(Error::Invalid(format!("optimiser tracks {} tensors, store has {}", self.m.len(), params.len())));
        }
        let mut sq = 0.0;
        for p in params {
            if let Some(g) = grads.get(p.var.as_tensor()) {
                sq += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        let scale = match self.cfg.clip {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let (b1, b2) = self.cfg.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.cfg.lr;
        for (i, p) in params.iter().enumerate() {
            let Some(g) = grads.get(p.var.as_tensor()) else { continue };
            let g = (g.detach() * scale)?;
            let m = ((&self.m[i] * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((&self.v[i] * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let step = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.cfg.eps)?)?;
            let w = p.var.as_tensor().detach();
            let decayed = if p.decay { (&w * (1.0 - lr * self.cfg.weight_decay))? } else { w };
            p.var.set(&(decayed - (step * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Builder, Init};
    use candle_core::DType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(vals: &[f64]) -> ParamStore {
        let mut s = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Builder::new(&mut s, &mut rng).get("w", vals.len(), Init::Zeros, false).unwrap();
        s.params()[0].var.set(&Tensor::new(vals, s.device()).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let s = store(&[1.0, -2.0]);
        let w = s.params()[0].var.as_tensor().clone();
        let loss = (w.sqr().unwrap().sum_all().unwrap() * 0.5).unwrap();
        let grads = loss.backward().unwrap();
        let mut opt = AdamW::new(AdamConfig::new(0.1, (0.8, 0.99), 0.0, 0.0), &s).unwrap();
        let norm = opt.apply(&s, &grads).unwrap();
        assert!((norm - 5f64.sqrt()).abs() < 1e-12);
        let now = s.params()[0].var.as_tensor().to_vec1::<f64>().unwrap();
        assert!((now[0] - 0.9).abs() < 1e-6 && (now[1] + 1.9).abs() < 1e-6);
        // moments must not keep the step's graph alive
        assert!(!opt.m[0].track_op() && !opt.v[0].track_op());
    }

    #[test]
    fn minimises_a_quadratic() {
        let s = store(&[3.0, -4.0, 0.5]);
        let mut opt = AdamW::new(AdamConfig::new(0.05, (0.8, 0.99), 0.0, 10.0), &s).unwrap();
        for _ in 0..400 {
            let w = s.params()[0].var.as_tensor().clone();
            let grads = w.sqr().unwrap().sum_all().unwrap().backward().unwrap();
            opt.apply(&s, &grads).unwrap();
        }
        let w = s.params()[0].var.as_tensor().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(w < 0.05, "{w}");
    }

    #[test]
    fn decay_only_where_flagged_and_nan_rejected() {
        let mut s = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Builder::new(&mut s, &mut rng);
        let a = b.get("a", 1, Init::Ones, true).unwrap();
        let c = b.get("c", 1, Init::Ones, false).unwrap();
        // zero gradient: only decay acts
        let loss = ((&a - &a).unwrap() + (&c - &c).unwrap()).unwrap().sum_all().unwrap();
        let mut opt = AdamW::new(AdamConfig::new(0.1, (0.8, 0.99), 0.5, 0.0), &s).unwrap();
        opt.apply(&s, &loss.backward().unwrap()).unwrap();
        assert!((scalar(s.params()[0].var.as_tensor()).unwrap() - 0.95).abs() < 1e-12);
        assert_eq!(scalar(s.params()[1].var.as_tensor()).unwrap(), 1.0);
        let bad = (a * f64::NAN).unwrap().sum_all().unwrap();
        assert!(opt.apply(&s, &bad.backward().unwrap()).is_err());
    }

    #[test]
    fn clipping_rescales_the_gradient() {
        let s = store(&[30.0, 40.0]);
        let w = s.params()[0].var.as_tensor().clone();
        let grads = (w.sqr().unwrap().sum_all().unwrap() * 0.5).unwrap().backward().unwrap();
        let mut opt = AdamW::new(AdamConfig::new(0.1, (0.8, 0.99), 0.0, 10.0), &s).unwrap();
        assert_eq!(opt.apply(&s, &grads).unwrap(), 50.0);
        // first moment holds the clipped gradient (0.2 · (6, 8))
        let m = opt.m[0].to_vec1::<f64>().unwrap();
        assert!((m[0] - 1.2).abs() < 1e-12 && (m[1] - 1.6).abs() < 1e-12);
    }
}
