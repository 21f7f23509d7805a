//! Multi-resolution STFT distance and paired-directory evaluation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::spectral::StftEngine;
use crate::wav::load_wav;

/// (fft size, hop, window) of the M-STFT resolutions.
pub const MSTFT_RESOLUTIONS: [(usize, usize, usize); 3] = [(1024, 120, 600), (2048, 240, 1200), (512, 50, 240)];

/// Power floor before the square root and logarithm.
pub const MSTFT_POWER_FLOOR: f64 = 1e-7;

/// Largest length difference (samples) tolerated between paired files;
/// the longer file is truncated.
pub const LENGTH_TOLERANCE: usize = 1024;

fn magnitudes(engine: &StftEngine, wave: &[f64]) -> Result<Vec<f64>> {
    Ok(engine.forward(wave)?.iter().map(|z| z.norm_sqr().max(MSTFT_POWER_FLOOR).sqrt()).collect())
}

/// Spectral convergence plus mean absolute log-magnitude difference at one
/// resolution.
pub fn stft_distance(reference: &[f64], generated: &[f64], fft: usize, hop: usize, win: usize) -> Result<f64> {
    if reference.len() != generated.len() {
        return Err(Error::Invalid(format!("lengths {} and {} differ", reference.len(), generated.len())));
    }
    let engine = StftEngine::new(fft, hop, win)?;
    let r = magnitudes(&engine, reference)?;
    let g = magnitudes(&engine, generated)?;
    let diff: f64 = r.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = r.iter().map(|a| a * a).sum();
    let sc = diff.sqrt() / norm.sqrt();
    let log = r.iter().zip(&g).map(|(a, b)| (a.ln() - b.ln()).abs()).sum::<f64>() / r.len() as f64;
    Ok(sc + log)
}

/// Sum of [`stft_distance`] over [`MSTFT_RESOLUTIONS`].
pub fn mstft(reference: &[f64], generated: &[f64]) -> Result<f64> {
    MSTFT_RESOLUTIONS.iter().map(|&(f, h, w)| stft_distance(reference, generated, f, h, w)).sum()
}

/// Trims two signals to a common length when they differ by at most
/// [`LENGTH_TOLERANCE`] samples.
pub fn align<'a>(a: &'a [f64], b: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
    if a.len().abs_diff(b.len()) > LENGTH_TOLERANCE {
        return Err(Error::Invalid(format!("lengths {} and {} differ by more than {LENGTH_TOLERANCE}", a.len(), b.len())));
    }
    let n = a.len().min(b.len());
    Ok((&a[..n], &b[..n]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileScore {
    pub name: String,
    pub mstft: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub files: Vec<FileScore>,
    pub mean_mstft: f64,
    pub seconds: f64,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let res: Vec<String> = MSTFT_RESOLUTIONS.iter().map(|(f, h, w)| format!("{f}/{h}/{w}")).collect();
        let mut out = format!("# M-STFT resolutions fft/hop/win: {}\nfile,mstft\n", res.join(" "));
        for f in &self.files {
            out.push_str(&format!("{},{}\n", f.name, f.mstft));
        }
        out.push_str(&format!("mean,{}\n", self.mean_mstft));
        out
    }
}

fn wav_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            names.push(path.file_name().expect("file").to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Scores every wav in `generated` against the same-named file in
/// `reference`. Both directories must hold the same set of names.
pub fn evaluate_dirs(reference: &Path, generated: &Path) -> Result<EvalReport> {
    let start = Instant::now();
    let refs = wav_names(reference)?;
    let gens = wav_names(generated)?;
    if refs.is_empty() {
        return Err(Error::Config(format!("no wav files in {}", reference.display())));
    }
    if refs != gens {
        let missing: Vec<_> = refs.iter().filter(|n| !gens.contains(n)).chain(gens.iter().filter(|n| !refs.contains(n))).collect();
        return Err(Error::Config(format!("unpaired files: {missing:?}")));
    }
    let mut files = Vec::new();
    for name in refs {
        let (a, sa) = load_wav(PathBuf::from(reference).join(&name))?;
        let (b, sb) = load_wav(PathBuf::from(generated).join(&name))?;
        if sa != sb {
            return Err(Error::Format(format!("{name}: sample rates {sa} and {sb}")));
        }
        let (a, b) = align(&a, &b)?;
        files.push(FileScore { name, mstft: mstft(a, b)? });
    }
    let mean_mstft = files.iter().map(|f| f.mstft).sum::<f64>() / files.len() as f64;
    Ok(EvalReport { files, mean_mstft, seconds: start.elapsed().as_secs_f64() })
}
