//! Loss weightings and the weighted totals built from them.

use crate::error::{invalid, Error, Result};

/// Weights of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LossWeights {
    pub data: f64,
    pub mel: f64,
    pub gen: f64,
    pub feat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { data: 1.0, mel: 0.1, gen: 20.0, feat: 20.0 }
    }
}

/// Component values of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenLossComponents {
    pub data: f64,
    pub mel: f64,
    pub gen: f64,
    pub feat: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        non_negative(&[self.data, self.mel, self.gen, self.feat])
    }

    /// Whether the adversarial terms are switched off, so no discriminator
    /// is needed.
    pub fn generator_only(&self) -> bool {
        self.gen == 0.0 && self.feat == 0.0
    }

    pub fn total(&self, c: &GenLossComponents) -> Result<f64> {
        finite(&[c.data, c.mel, c.gen, c.feat])?;
        Ok(self.data * c.data + self.mel * c.mel + self.gen * c.gen + self.feat * c.feat)
    }
}

/// Weights of the single-step distillation objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DistillWeights {
    pub distill: f64,
    pub mel: f64,
    pub gen: f64,
    pub feat: f64,
    pub inverse: f64,
    pub gt: f64,
}

impl Default for DistillWeights {
    fn default() -> Self {
        Self { distill: 1.0, mel: 0.1, gen: 20.0, feat: 20.0, inverse: 1.0, gt: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistillLossComponents {
    pub distill: f64,
    pub mel: f64,
    pub gen: f64,
    pub feat: f64,
    pub inverse: f64,
    pub gt: f64,
}

impl DistillWeights {
    pub fn validate(&self) -> Result<()> {
        non_negative(&[self.distill, self.mel, self.gen, self.feat, self.inverse, self.gt])
    }

    pub fn generator_only(&self) -> bool {
        self.gen == 0.0 && self.feat == 0.0
    }

    pub fn total(&self, c: &DistillLossComponents) -> Result<f64> {
        finite(&[c.distill, c.mel, c.gen, c.feat, c.inverse, c.gt])?;
        Ok(self.distill * c.distill
            + self.mel * c.mel
            + self.gen * c.gen
            + self.feat * c.feat
            + self.inverse * c.inverse
            + self.gt * c.gt)
    }
}

fn non_negative(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        Some(v) => Err(invalid!("loss weight {v} must be finite and non-negative")),
        None => Ok(()),
    }
}

fn finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("loss component"))
    }
}

/// Hinge term `max(0, 1 - x)`.
pub fn hinge(x: f64) -> f64 {
    (1.0 - x).max(0.0)
}
