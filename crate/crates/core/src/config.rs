//! Topology of the subband network.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// A contiguous band of frequency bins cut into equal-width subbands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Region {
    pub freq_span: usize,
    pub kernel_f: usize,
    pub stride_f: usize,
    pub kernel_t: usize,
    pub stride_t: usize,
}

impl Region {
    /// Region of `freq_span` bins split into subbands of `width` bins, with
    /// a 3-frame temporal kernel.
    pub const fn new(freq_span: usize, width: usize) -> Self {
        Self { freq_span, kernel_f: width, stride_f: width, kernel_t: 3, stride_t: 1 }
    }

    pub fn subbands(&self) -> usize {
        self.freq_span / self.stride_f
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.freq_span == 0 || self.stride_f == 0 {
            return Err(invalid!("region {index}: empty span or zero stride"));
        }
        if self.freq_span % self.stride_f != 0 {
            return Err(invalid!(
                "region {index}: span {} not divisible by stride {}",
                self.freq_span,
                self.stride_f
            ));
        }
        if self.kernel_f != self.stride_f {
            return Err(invalid!("region {index}: frequency kernel must equal its stride"));
        }
        if self.kernel_t % 2 == 0 || self.stride_t != 1 {
            return Err(invalid!("region {index}: time kernel must be odd with stride 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BcdConfig {
    pub regions: Vec<Region>,
    pub channels: usize,
    pub blocks: usize,
    pub k_f: usize,
    pub k_l: usize,
    pub time_embed_dim: usize,
    pub sola_rank: usize,
    pub ffn_expansion: usize,
}

impl Default for BcdConfig {
    /// 512 network bins in three regions of 12, 8 and 4 subbands (24 total),
    /// 256 channels, 8 blocks.
    fn default() -> Self {
        Self {
            regions: vec![Region::new(144, 12), Region::new(192, 24), Region::new(176, 44)],
            channels: 256,
            blocks: 8,
            k_f: 9,
            k_l: 11,
            time_embed_dim: 256,
            sola_rank: 32,
            ffn_expansion: 4,
        }
    }
}

impl BcdConfig {
    /// 64 network bins in four subbands, 32 channels, 2 blocks.
    pub fn tiny() -> Self {
        Self {
            regions: vec![Region::new(16, 8), Region::new(16, 16), Region::new(32, 32)],
            channels: 32,
            blocks: 2,
            k_f: 9,
            k_l: 11,
            time_embed_dim: 32,
            sola_rank: 8,
            ffn_expansion: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(invalid!("at least one region is required"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            r.validate(i)?;
        }
        for (name, v) in [
            ("channels", self.channels),
            ("time_embed_dim", self.time_embed_dim),
            ("sola_rank", self.sola_rank),
            ("ffn_expansion", self.ffn_expansion),
        ] {
            if v == 0 {
                return Err(invalid!("{name} must be positive"));
            }
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(invalid!("time_embed_dim must be even"));
        }
        if self.k_f % 2 == 0 || self.k_l % 2 == 0 {
            return Err(invalid!("large kernel {}x{} must be odd", self.k_f, self.k_l));
        }
        Ok(())
    }

    /// Frequency bins seen by the network (`Σ freq_span`).
    pub fn net_bins(&self) -> usize {
        self.regions.iter().map(|r| r.freq_span).sum()
    }

    /// Spectrum bins including the Nyquist bin the network skips.
    pub fn spectrum_bins(&self) -> usize {
        self.net_bins() + 1
    }

    /// Total subband count `N`.
    pub fn subbands(&self) -> usize {
        self.regions.iter().map(Region::subbands).sum()
    }

    /// First bin of each region.
    pub fn region_offsets(&self) -> Vec<usize> {
        self.regions
            .iter()
            .scan(0, |acc, r| {
                let start = *acc;
                *acc += r.freq_span;
                Some(start)
            })
            .collect()
    }

    /// Largest temporal kernel of any region.
    pub fn max_kernel_t(&self) -> usize {
        self.regions.iter().map(|r| r.kernel_t).max().unwrap_or(1)
    }
}
