//! Bridge marginal for training and first-order reverse samplers.
//!
//! The network is a data predictor: given a state `x_τ`, the surrogate `Y` and
//! the state's time `τ`, it estimates the clean spectrum `X`. Both samplers
//! move from `τ` to an earlier time `t` with closed-form coefficients of the
//! schedule.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::schedule::BridgeSchedule;
use crate::spectrum::ComplexSpectrum;

/// Source of independent standard normal draws.
///
/// Training-time marginal sampling and the SDE sampler draw through this one
/// abstraction: every complex entry takes two draws, real part first.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
}

/// Always returns zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoNoise;

impl NoiseSource for NoNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }
}

/// Spectrum of unit-variance complex noise (variance one per channel).
pub fn complex_noise(
    noise: &mut impl NoiseSource,
    like: &ComplexSpectrum,
) -> ComplexSpectrum {
    let mut out = like.clone();
    for z in out.data_mut() {
        let re = noise.standard_normal();
        let im = noise.standard_normal();
        *z = Complex64::new(re, im);
    }
    out
}

/// Data predictor `B(x, Y, t)`.
pub trait Predictor {
    type Error: From<Error>;

    fn predict(
        &mut self,
        x: &ComplexSpectrum,
        y: &ComplexSpectrum,
        t: f64,
    ) -> core::result::Result<ComplexSpectrum, Self::Error>;
}

impl<F> Predictor for F
where
    F: FnMut(&ComplexSpectrum, &ComplexSpectrum, f64) -> Result<ComplexSpectrum>,
{
    type Error = Error;

    fn predict(&mut self, x: &ComplexSpectrum, y: &ComplexSpectrum, t: f64) -> Result<ComplexSpectrum> {
        self(x, y, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SamplerKind {
    #[default]
    Sde,
    Ode,
}

impl core::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sde" => Ok(Self::Sde),
            "ode" => Ok(Self::Ode),
            other => Err(invalid!("unknown sampler '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SamplerConfig {
    pub sampler: SamplerKind,
    pub nfe: usize,
    pub t_eps: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { sampler: SamplerKind::Sde, nfe: 4, t_eps: 0.0 }
    }
}

impl SamplerConfig {
    pub fn new(sampler: SamplerKind, nfe: usize) -> Self {
        Self { sampler, nfe, t_eps: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(invalid!("nfe must be at least 1"));
        }
        if !(self.t_eps >= 0.0 && self.t_eps < 1.0 / self.nfe as f64) {
            return Err(invalid!("t_eps {} outside [0, 1/nfe)", self.t_eps));
        }
        Ok(())
    }
}

/// Descending grid `1 = τ_0 > … > τ_nfe = t_eps`, followed by a final step
/// to 0 when `t_eps > 0`.
pub fn timestep_grid(cfg: &SamplerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.nfe;
    let span = 1.0 - cfg.t_eps;
    let mut grid: Vec<f64> = (0..n).map(|i| 1.0 - span * i as f64 / n as f64).collect();
    grid.push(cfg.t_eps);
    if cfg.t_eps > 0.0 {
        grid.push(0.0);
    }
    Ok(grid)
}

/// State `x_t` of the bridge together with its condition `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x: ComplexSpectrum,
    pub t: f64,
    pub y: ComplexSpectrum,
}

impl DiffusionState {
    pub fn new(x: ComplexSpectrum, t: f64, y: ComplexSpectrum) -> Result<Self> {
        x.ensure_same_shape(&y)?;
        check_time(t)?;
        Ok(Self { x, t, y })
    }

    /// Terminal state `x_1 = Y`.
    pub fn terminal(y: ComplexSpectrum) -> Self {
        Self { x: y.clone(), t: 1.0, y }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid!("time {t} outside [0, 1]"));
    }
    Ok(())
}

/// Marginal `p_t = N(a X + b Y, std² I)` of the bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCoeffs {
    pub x: f64,
    pub y: f64,
    pub std: f64,
}

pub fn marginal_coeffs(t: f64, sched: &BridgeSchedule) -> Result<MarginalCoeffs> {
    check_time(t)?;
    let s1 = sched.sigma1_sq();
    if !(s1 > 0.0) {
        return Err(invalid!("degenerate schedule: σ_1² = {s1}"));
    }
    let (s2, sb2) = (sched.sigma2(t), sched.sigma_bar2(t));
    let alpha = sched.alpha(t);
    Ok(MarginalCoeffs {
        x: alpha * sb2 / s1,
        y: sched.alpha_bar(t) * s2 / s1,
        std: alpha * libm::sqrt((sb2 * s2).max(0.0)) / libm::sqrt(s1),
    })
}

/// Mean and per-channel standard deviation of the marginal at `t`.
pub fn marginal(
    x0: &ComplexSpectrum,
    y: &ComplexSpectrum,
    t: f64,
    sched: &BridgeSchedule,
) -> Result<(ComplexSpectrum, f64)> {
    let c = marginal_coeffs(t, sched)?;
    Ok((x0.combine(c.x, y, c.y)?, c.std))
}

/// Draws `x_t = mean + std · ε` for training.
pub fn sample_xt(
    x0: &ComplexSpectrum,
    y: &ComplexSpectrum,
    t: f64,
    sched: &BridgeSchedule,
    noise: &mut impl NoiseSource,
) -> Result<DiffusionState> {
    let (mean, std) = marginal(x0, y, t, sched)?;
    let eps = complex_noise(noise, &mean);
    let x = mean.combine(1.0, &eps, std)?;
    Ok(DiffusionState { x, t, y: y.clone() })
}

/// Coefficients of `x_t = a x_τ + b B + n ε` (SDE) or `x_t = a x_τ + b B + n Y`
/// (ODE, with `n` multiplying the condition).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoeffs {
    pub state: f64,
    pub prediction: f64,
    pub extra: f64,
}

fn check_step(tau: f64, t: f64) -> Result<()> {
    check_time(tau)?;
    check_time(t)?;
    if !(t < tau) {
        return Err(invalid!("step must go backwards in time: {tau} -> {t}"));
    }
    Ok(())
}

/// Posterior-sampling (SDE) step coefficients; `extra` scales the noise.
pub fn sde_coeffs(tau: f64, t: f64, sched: &BridgeSchedule) -> Result<StepCoeffs> {
    check_step(tau, t)?;
    let s2_tau = sched.sigma2(tau);
    if !(s2_tau > 0.0) {
        return Err(Error::Boundary("σ_τ = 0, cannot step from τ = 0"));
    }
    let s2_t = sched.sigma2(t);
    let (a_tau, a_t) = (sched.alpha(tau), sched.alpha(t));
    let ratio = s2_t / s2_tau;
    Ok(StepCoeffs {
        state: a_t * ratio / a_tau,
        prediction: a_t * (1.0 - ratio),
        extra: a_t * libm::sqrt(s2_t) * libm::sqrt((1.0 - ratio).max(0.0)),
    })
}

/// Probability-flow (ODE) step coefficients; `extra` scales `Y`.
///
/// Leaving `τ = 1`, where `σ̄_τ = 0`, uses the limit in which the state and
/// the singular part of the `Y` term cancel (`x_1 = Y`), so the state
/// coefficient is zero.
pub fn ode_coeffs(tau: f64, t: f64, sched: &BridgeSchedule) -> Result<StepCoeffs> {
    check_step(tau, t)?;
    let s1 = sched.sigma1_sq();
    let (a_t, a_1) = (sched.alpha(t), sched.alpha(1.0));
    let (s_t, sb_t) = (libm::sqrt(sched.sigma2(t)), libm::sqrt(sched.sigma_bar2(t).max(0.0)));
    let (s_tau, sb_tau) =
        (libm::sqrt(sched.sigma2(tau)), libm::sqrt(sched.sigma_bar2(tau).max(0.0)));
    if !(s_tau > 0.0) {
        return Err(Error::Boundary("σ_τ = 0, cannot step from τ = 0"));
    }
    if sb_tau == 0.0 {
        return Ok(StepCoeffs {
            state: 0.0,
            prediction: a_t * sb_t * sb_t / s1,
            extra: a_t * s_t * s_t / (a_1 * s1),
        });
    }
    let a_tau = sched.alpha(tau);
    Ok(StepCoeffs {
        state: a_t * s_t * sb_t / (a_tau * s_tau * sb_tau),
        prediction: a_t / s1 * (sb_t * sb_t - sb_tau * s_t * sb_t / s_tau),
        extra: a_t / (a_1 * s1) * (s_t * s_t - s_tau * s_t * sb_t / sb_tau),
    })
}

/// One reverse SDE step from `state.t` to `t`.
pub fn reverse_sde_step<P: Predictor>(
    state: &DiffusionState,
    t: f64,
    predictor: &mut P,
    sched: &BridgeSchedule,
    noise: &mut impl NoiseSource,
) -> core::result::Result<DiffusionState, P::Error> {
    let c = sde_coeffs(state.t, t, sched)?;
    let pred = predictor.predict(&state.x, &state.y, state.t)?;
    state.x.ensure_same_shape(&pred)?;
    let x = if c.state == 0.0 && c.extra == 0.0 {
        pred.map(|z| z * c.prediction)
    } else {
        let eps = complex_noise(noise, &state.x);
        state.x.combine(c.state, &pred, c.prediction)?.combine(1.0, &eps, c.extra)?
    };
    Ok(DiffusionState { x: x.meta_from(&state.x), t, y: state.y.clone() })
}

/// One deterministic reverse ODE step from `state.t` to `t`.
pub fn reverse_ode_step<P: Predictor>(
    state: &DiffusionState,
    t: f64,
    predictor: &mut P,
    sched: &BridgeSchedule,
) -> core::result::Result<DiffusionState, P::Error> {
    let c = ode_coeffs(state.t, t, sched)?;
    let pred = predictor.predict(&state.x, &state.y, state.t)?;
    state.x.ensure_same_shape(&pred)?;
    let x = state.x.combine(c.state, &pred, c.prediction)?.combine(1.0, &state.y, c.extra)?;
    Ok(DiffusionState { x: x.meta_from(&state.x), t, y: state.y.clone() })
}

/// Runs the reverse process from `x_1 = Y` down to `t = 0` and returns `x_0`.
pub fn sample<P: Predictor>(
    predictor: &mut P,
    y: &ComplexSpectrum,
    cfg: &SamplerConfig,
    sched: &BridgeSchedule,
    noise: &mut impl NoiseSource,
) -> core::result::Result<ComplexSpectrum, P::Error> {
    let grid = timestep_grid(cfg)?;
    let mut state = DiffusionState::terminal(y.clone());
    for &t in &grid[1..] {
        state = match cfg.sampler {
            SamplerKind::Sde => reverse_sde_step(&state, t, predictor, sched, noise)?,
            SamplerKind::Ode => reverse_ode_step(&state, t, predictor, sched)?,
        };
    }
    Ok(state.x)
}
