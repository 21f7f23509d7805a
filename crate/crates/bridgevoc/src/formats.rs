//! Little-endian float32 binaries for filterbanks and precomputed Mel
//! spectra.
//!
//! Filterbank: `b"BVFB"`, `F: u32`, `F_m: u32`, `sr: u32`, `f_max: f32`,
//! then `A` (`F_m x F`) and `A†` (`F x F_m`), row-major.
//!
//! Mel: `b"BVML"`, `F_m: u32`, `L: u32`, `sr: u32`, then the log-Mel
//! matrix (`F_m x L`), row-major.

use std::path::Path;

use bridgevoc_core::{Matrix, MelFilterbank, MelSpectrum};

use crate::error::{Error, Result};

const FILTERBANK_MAGIC: &[u8; 4] = b"BVFB";
const MEL_MAGIC: &[u8; 4] = b"BVML";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("matrix size overflows".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        Ok(Matrix::from_vec(rows, cols, data)?)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn magic(c: &mut Cursor, expected: &[u8; 4]) -> Result<()> {
    let got = c.take(4)?;
    if got != expected {
        return Err(Error::Format(format!("bad magic {got:?}")));
    }
    Ok(())
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_filterbank(fb: &MelFilterbank) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * fb.bins() * fb.n_mels());
    out.extend_from_slice(FILTERBANK_MAGIC);
    out.extend_from_slice(&(fb.bins() as u32).to_le_bytes());
    out.extend_from_slice(&(fb.n_mels() as u32).to_le_bytes());
    out.extend_from_slice(&fb.sample_rate().to_le_bytes());
    out.extend_from_slice(&(fb.f_max() as f32).to_le_bytes());
    put_matrix(&mut out, fb.matrix());
    put_matrix(&mut out, fb.pinv());
    out
}

pub fn decode_filterbank(bytes: &[u8]) -> Result<MelFilterbank> {
    let mut c = Cursor { bytes, pos: 0 };
    magic(&mut c, FILTERBANK_MAGIC)?;
    let bins = c.u32()? as usize;
    let n_mels = c.u32()? as usize;
    let sr = c.u32()?;
    let f_max = c.f32()? as f64;
    let a = c.matrix(n_mels, bins)?;
    let pinv = c.matrix(bins, n_mels)?;
    c.finish()?;
    Ok(MelFilterbank::from_parts(a, pinv, sr, f_max)?)
}

pub fn encode_mel(mel: &MelSpectrum) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * mel.data.as_slice().len());
    out.extend_from_slice(MEL_MAGIC);
    out.extend_from_slice(&(mel.n_mels() as u32).to_le_bytes());
    out.extend_from_slice(&(mel.frames() as u32).to_le_bytes());
    out.extend_from_slice(&mel.sample_rate.to_le_bytes());
    put_matrix(&mut out, &mel.data);
    out
}

pub fn decode_mel(bytes: &[u8]) -> Result<MelSpectrum> {
    let mut c = Cursor { bytes, pos: 0 };
    magic(&mut c, MEL_MAGIC)?;
    let n_mels = c.u32()? as usize;
    let frames = c.u32()? as usize;
    let sr = c.u32()?;
    let data = c.matrix(n_mels, frames)?;
    c.finish()?;
    Ok(MelSpectrum::new(data, sr)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_filterbank(path: impl AsRef<Path>, fb: &MelFilterbank) -> Result<()> {
    write(path.as_ref(), &encode_filterbank(fb))
}

pub fn load_filterbank(path: impl AsRef<Path>) -> Result<MelFilterbank> {
    decode_filterbank(&read(path.as_ref())?)
}

pub fn save_mel(path: impl AsRef<Path>, mel: &MelSpectrum) -> Result<()> {
    write(path.as_ref(), &encode_mel(mel))
}

pub fn load_mel(path: impl AsRef<Path>) -> Result<MelSpectrum> {
    decode_mel(&read(path.as_ref())?)
}
