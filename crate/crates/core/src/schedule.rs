//! Noise schedules of the Schrödinger bridge between the target spectrum
//! (`t = 0`) and the range-space surrogate (`t = 1`).
//!
//! With a linear reference drift `f(t) x` and diffusion `g(t)`,
//!
//! ```text
//! α_t  = exp(∫_0^t f)          ᾱ_t  = α_t / α_1
//! σ_t² = ∫_0^t g² / α²         σ̄_t² = σ_1² - σ_t²
//! ```

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScheduleKind {
    /// `f = 0`, `g² = β0 + t Δβ`.
    #[default]
    Gmax,
    /// Variance preserving: `f = -(β0 + t Δβ) / 2`, `g² = c (β0 + t Δβ)`.
    Vp,
    /// Variance exploding: `f = 0`, `g² = c k^{2t}`.
    Ve,
}

impl core::str::FromStr for ScheduleKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmax" => Ok(Self::Gmax),
            "vp" => Ok(Self::Vp),
            "ve" => Ok(Self::Ve),
            other => Err(invalid!("unknown schedule '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BridgeSchedule {
    pub kind: ScheduleKind,
    pub beta0: f64,
    pub beta1: f64,
    pub c: f64,
    pub k: f64,
}

impl Default for BridgeSchedule {
    fn default() -> Self {
        Self::new(ScheduleKind::Gmax)
    }
}

impl BridgeSchedule {
    /// Schedule with its customary parameters: `{β0, β1} = {0.01, 20}` for
    /// gmax, `{β0, β1, c} = {0.01, 20, 0.4}` for VP, `{c, k} = {0.01, 2.6}`
    /// for VE. Fields a kind does not use are left at these values.
    pub fn new(kind: ScheduleKind) -> Self {
        let (beta0, beta1, c, k) = match kind {
            ScheduleKind::Gmax => (0.01, 20.0, 0.4, 2.6),
            ScheduleKind::Vp => (0.01, 20.0, 0.4, 2.6),
            ScheduleKind::Ve => (0.01, 20.0, 0.01, 2.6),
        };
        Self { kind, beta0, beta1, c, k }
    }

    pub fn gmax(beta0: f64, beta1: f64) -> Result<Self> {
        Self { beta0, beta1, ..Self::new(ScheduleKind::Gmax) }.validated()
    }

    pub fn vp(beta0: f64, beta1: f64, c: f64) -> Result<Self> {
        Self { beta0, beta1, c, ..Self::new(ScheduleKind::Vp) }.validated()
    }

    pub fn ve(c: f64, k: f64) -> Result<Self> {
        Self { c, k, ..Self::new(ScheduleKind::Ve) }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid!("schedule parameter {name} = {v} must be positive"))
            }
        };
        match self.kind {
            ScheduleKind::Gmax | ScheduleKind::Vp => {
                positive("beta0", self.beta0)?;
                positive("beta1", self.beta1)?;
                if self.beta1 < self.beta0 {
                    return Err(invalid!("beta1 {} below beta0 {}", self.beta1, self.beta0));
                }
                if self.kind == ScheduleKind::Vp {
                    positive("c", self.c)?;
                }
            }
            ScheduleKind::Ve => {
                positive("c", self.c)?;
                if !(self.k > 1.0 && self.k.is_finite()) {
                    return Err(invalid!("VE base k = {} must exceed 1", self.k));
                }
            }
        }
        if !(self.sigma1_sq() > 0.0) {
            return Err(invalid!("degenerate schedule: σ_1² = {}", self.sigma1_sq()));
        }
        Ok(())
    }

    fn delta_beta(&self) -> f64 {
        self.beta1 - self.beta0
    }

    /// `∫_0^t (β0 + s Δβ) ds`.
    fn beta_integral(&self, t: f64) -> f64 {
        self.beta0 * t + 0.5 * self.delta_beta() * t * t
    }

    /// Drift coefficient `f(t)`.
    pub fn f(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Gmax | ScheduleKind::Ve => 0.0,
            ScheduleKind::Vp => -0.5 * (self.beta0 + t * self.delta_beta()),
        }
    }

    /// Squared diffusion coefficient `g²(t)`.
    pub fn g2(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Gmax => self.beta0 + t * self.delta_beta(),
            ScheduleKind::Vp => self.c * (self.beta0 + t * self.delta_beta()),
            ScheduleKind::Ve => self.c * libm::pow(self.k, 2.0 * t),
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Gmax | ScheduleKind::Ve => 1.0,
            ScheduleKind::Vp => libm::exp(-0.5 * self.beta_integral(t)),
        }
    }

    pub fn alpha_bar(&self, t: f64) -> f64 {
        self.alpha(t) / self.alpha(1.0)
    }

    pub fn sigma2(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Gmax => 0.5 * t * t * self.delta_beta() + self.beta0 * t,
            ScheduleKind::Vp => self.c * libm::expm1(self.beta_integral(t)),
            ScheduleKind::Ve => {
                self.c * (libm::pow(self.k, 2.0 * t) - 1.0) / (2.0 * libm::log(self.k))
            }
        }
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma2(1.0)
    }

    pub fn sigma_bar2(&self, t: f64) -> f64 {
        self.sigma1_sq() - self.sigma2(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmax_endpoints() {
        let s = BridgeSchedule::new(ScheduleKind::Gmax);
        assert!((s.sigma1_sq() - 10.005).abs() < 1e-12);
        assert_eq!(s.sigma2(0.0), 0.0);
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.sigma_bar2(1.0), 0.0);
        assert_eq!(s.alpha_bar(1.0), 1.0);
    }

    #[test]
    fn ve_and_vp_start_at_zero_variance() {
        for kind in [ScheduleKind::Ve, ScheduleKind::Vp] {
            let s = BridgeSchedule::new(kind);
            s.validate().unwrap();
            assert_eq!(s.sigma2(0.0), 0.0);
            assert_eq!(s.alpha(0.0), 1.0);
            assert_eq!(s.alpha_bar(1.0), 1.0);
        }
    }

    #[test]
    fn rejects_non_positive_parameters() {
        assert!(BridgeSchedule::gmax(0.0, 20.0).is_err());
        assert!(BridgeSchedule::gmax(0.01, -1.0).is_err());
        assert!(BridgeSchedule::vp(0.01, 20.0, 0.0).is_err());
        assert!(BridgeSchedule::ve(0.01, 1.0).is_err());
        assert!(BridgeSchedule::ve(-0.01, 2.6).is_err());
    }

    #[test]
    fn parses_kind() {
        assert_eq!("GMAX".parse::<ScheduleKind>().unwrap(), ScheduleKind::Gmax);
        assert_eq!("ve".parse::<ScheduleKind>().unwrap(), ScheduleKind::Ve);
        assert!("cosine".parse::<ScheduleKind>().is_err());
    }
}
