//! Rank difference between the Mel-degraded magnitude `A†A|X|` and `|X|`.

use std::collections::BTreeMap;

use bridgevoc_core::mel::rank_difference;
use bridgevoc_core::{MelFilterbank, StftConfig};

use crate::error::{Error, Result};
use crate::spectral::stft;

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RankRecord {
    pub name: String,
    pub delta: i64,
}

/// `rank(A†A|X|) - rank(|X|)` for one waveform.
pub fn rank_delta(wave: &[f64], cfg: &StftConfig, fb: &MelFilterbank, tol: f64) -> Result<i64> {
    let mag = stft(wave, cfg, fb.sample_rate())?.magnitude();
    let degraded = fb.range_projection(&mag)?;
    Ok(rank_difference(&degraded, &mag, tol)?)
}

/// Counts per integer bin, keyed by the bin's left edge.
pub fn histogram(deltas: &[i64]) -> Result<Vec<(i64, usize)>> {
    if deltas.is_empty() {
        return Err(Error::Config("rank analysis needs at least one file".into()));
    }
    let mut counts = BTreeMap::new();
    for &d in deltas {
        *counts.entry(d).or_insert(0usize) += 1;
    }
    let (lo, hi) = (*counts.keys().next().expect("non-empty"), *counts.keys().last().expect("non-empty"));
    Ok((lo..=hi).map(|b| (b, counts.get(&b).copied().unwrap_or(0))).collect())
}

pub fn histogram_csv(hist: &[(i64, usize)]) -> String {
    let mut out = String::from("bin_left,count\n");
    for (b, c) in hist {
        out.push_str(&format!("{b},{c}\n"));
    }
    out
}

/// Minimum, maximum and mean of the differences.
pub fn summary(deltas: &[i64]) -> Result<(i64, i64, f64)> {
    let min = *deltas.iter().min().ok_or_else(|| Error::Config("no rank values".into()))?;
    let max = *deltas.iter().max().expect("non-empty");
    Ok((min, max, deltas.iter().sum::<i64>() as f64 / deltas.len() as f64))
}
