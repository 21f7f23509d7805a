//! Omnidirectional phase operator: a fixed bank of nine 3x3 kernels applied to
//! a phase map. One kernel is the identity; the other eight take the phase
//! difference between a bin and one of its eight time-frequency neighbours.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::linalg::Matrix;

/// Neighbour offsets `(Δf, Δl)` of the eight difference kernels, in channel
/// order after the identity channel.
pub const NEIGHBOURS: [(isize, isize); 8] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

pub const CHANNELS: usize = 9;

pub type Kernel = [[f64; 3]; 3];

/// The nine fixed kernels: identity first, then `center - neighbour` for
/// each entry of [`NEIGHBOURS`].
#[derive(Debug, Clone, PartialEq)]
pub struct OmniKernels {
    kernels: [Kernel; CHANNELS],
}

impl Default for OmniKernels {
    fn default() -> Self {
        let mut kernels = [[[0.0; 3]; 3]; CHANNELS];
        kernels[0][1][1] = 1.0;
        for (k, &(df, dl)) in NEIGHBOURS.iter().enumerate() {
            let kernel = &mut kernels[k + 1];
            kernel[1][1] = 1.0;
            kernel[(1 + df) as usize][(1 + dl) as usize] = -1.0;
        }
        Self { kernels }
    }
}

impl OmniKernels {
    pub fn kernels(&self) -> &[Kernel; CHANNELS] {
        &self.kernels
    }

    pub fn kernel(&self, channel: usize) -> &Kernel {
        &self.kernels[channel]
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x - 2.0 * PI * libm::floor((x + PI) / (2.0 * PI));
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Reflect padding index (`-1 -> 1`, `n -> n - 2`); edge for length one.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Applies the kernel bank to a phase map with reflect padding. Channel 0 is
/// the phase itself; the eight difference channels are wrapped to `(-π, π]`.
pub fn omni_phase(phase: &Matrix) -> Vec<Matrix> {
    let kernels = OmniKernels::default();
    let (rows, cols) = phase.shape();
    kernels
        .kernels()
        .iter()
        .enumerate()
        .map(|(ch, kernel)| {
            Matrix::from_fn(rows, cols, |f, l| {
                let mut acc = 0.0;
                for (a, krow) in kernel.iter().enumerate() {
                    for (b, &w) in krow.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let ff = reflect_index(f as isize + a as isize - 1, rows);
                        let ll = reflect_index(l as isize + b as isize - 1, cols);
                        acc += w * phase[(ff, ll)];
                    }
                }
                if ch == 0 {
                    acc
                } else {
                    wrap_phase(acc)
                }
            })
        })
        .collect()
}
