#![allow(dead_code)]

use std::f64::consts::PI;

use bridgevoc_core::mel::LOG_FLOOR;
use bridgevoc_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SR: u32 = 22050;

/// One second of a gliding harmonic tone with a pulsing envelope.
pub fn voiced_clip() -> Vec<f64> {
    let sr = SR as f64;
    (0..SR as usize)
        .map(|i| {
            let t = i as f64 / sr;
            let f0 = 140.0 + 30.0 * (2.0 * PI * 1.5 * t).sin();
            let env = 0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin().abs();
            let s: f64 = (1..12).map(|h| (2.0 * PI * f0 * h as f64 * t + 0.3 * h as f64).sin() / h as f64).sum();
            0.25 * env * s
        })
        .collect()
}

/// Random harmonic mixture plus a little noise.
pub fn synthetic_clip(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partials: Vec<(f64, f64, f64)> = (0..rng.random_range(2..8))
        .map(|_| (rng.random_range(80.0..4000.0), rng.random_range(0.02..0.2), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / SR as f64;
            let tone: f64 = partials.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            tone + rng.random_range(-0.01..0.01)
        })
        .collect()
}

pub fn white(len: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Periodic Hann of `win` taps centred in `fft` samples.
pub fn centred_hann(win: usize, fft: usize) -> Vec<f64> {
    let off = (fft - win) / 2;
    (0..fft)
        .map(|n| if n < off || n >= off + win { 0.0 } else { 0.5 - 0.5 * (2.0 * PI * (n - off) as f64 / win as f64).cos() })
        .collect()
}

/// Centred frames with mirrored edges, evaluated with a direct DFT sum.
/// Returns `(re, im)` as `bins x frames` row-major vectors.
pub fn naive_stft(x: &[f64], fft: usize, hop: usize, win: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let pad = fft / 2;
    let n = x.len() as isize;
    let at = |i: isize| -> f64 {
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        x[j as usize]
    };
    let w = centred_hann(win, fft);
    let frames = 1 + x.len() / hop;
    let bins = fft / 2 + 1;
    let cos: Vec<f64> = (0..fft).map(|j| (2.0 * PI * j as f64 / fft as f64).cos()).collect();
    let sin: Vec<f64> = (0..fft).map(|j| -(2.0 * PI * j as f64 / fft as f64).sin()).collect();
    let (mut re, mut im) = (vec![0.0; bins * frames], vec![0.0; bins * frames]);
    for l in 0..frames {
        let frame: Vec<f64> = (0..fft).map(|m| at((l * hop + m) as isize - pad as isize) * w[m]).collect();
        for k in 0..bins {
            let (mut a, mut b) = (0.0, 0.0);
            for (m, v) in frame.iter().enumerate() {
                let j = (k * m) % fft;
                a += v * cos[j];
                b += v * sin[j];
            }
            re[k * frames + l] = a;
            im[k * frames + l] = b;
        }
    }
    (re, im, frames)
}

/// Log-Mel matrix from a direct DFT with the given power offset.
pub fn naive_log_mel(x: &[f64], fft: usize, hop: usize, filters: &Matrix, power_eps: f64) -> Vec<f64> {
    let (re, im, frames) = naive_stft(x, fft, hop, fft);
    let bins = fft / 2 + 1;
    let mut out = Vec::with_capacity(filters.rows() * frames);
    for r in 0..filters.rows() {
        for l in 0..frames {
            let mut acc = 0.0;
            for k in 0..bins {
                let i = k * frames + l;
                acc += filters[(r, k)] * (re[i] * re[i] + im[i] * im[i] + power_eps).sqrt();
            }
            out.push(acc.max(LOG_FLOOR).ln());
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
