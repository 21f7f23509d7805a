//! Allocation-only numerical core of the BridgeVoC vocoder.
//!
//! Everything in this crate is pure and `no_std` (with `alloc`): spectral
//! containers and power-law compression, Mel filterbanks with their
//! Moore-Penrose pseudo-inverse, the range-space spectral surrogate, rank
//! diagnostics, Schrödinger-bridge noise schedules with the matching
//! training marginal and reverse SDE/ODE samplers, the omnidirectional phase
//! operator, and the network/loss configuration types.
//!
//! IO, tensors, training and the command line live in the `bridgevoc` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod config;
pub mod error;
pub mod linalg;
pub mod mel;
pub mod omni;
pub mod sampler;
pub mod schedule;
pub mod spectrum;
pub mod weights;

pub use config::{BcdConfig, Region};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use mel::{MelFilterbank, MelSpectrum};
pub use sampler::{DiffusionState, NoiseSource, Predictor, SamplerConfig, SamplerKind};
pub use schedule::{BridgeSchedule, ScheduleKind};
pub use spectrum::{ComplexSpectrum, CompressionConfig, Domain, StftConfig};
pub use weights::{DistillWeights, LossWeights};

pub use num_complex::Complex64;
