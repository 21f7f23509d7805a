//! Training, inference and tooling for the bridge vocoder.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod discriminators;
pub mod distill;
pub mod dsp;
pub mod error;
pub mod formats;
pub mod kernels;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod noise;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod rank;
pub mod spectral;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
