//! Feature cache files.
//!
//! Layout, little-endian: magic `LMEL`, version `u32`, frame count `u32`,
//! mel bins `u32`, then `frames * mel_bins` `f32` values row-major. Window
//! and hop are not stored; readers get the toolkit defaults.

use std::fs;
use std::path::Path;

use crate::audio::Spectrogram;
use crate::error::{Error, Result};

pub const LMEL_MAGIC: &[u8; 4] = b"LMEL";
pub const LMEL_VERSION: u32 = 1;

pub fn write_lmel(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut out = Vec::with_capacity(16 + spec.values.len() * 4);
    out.extend_from_slice(LMEL_MAGIC);
    out.extend_from_slice(&LMEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    out.extend_from_slice(&(spec.mel_bins as u32).to_le_bytes());
    for v in &spec.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_lmel(path: &Path) -> Result<Spectrogram> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Ingest(format!("cannot read feature file {}: {e}", path.display())))?;
    if bytes.len() < 16 {
        return Err(Error::Format(format!("{}: shorter than an LMEL header", path.display())));
    }
    if &bytes[0..4] != LMEL_MAGIC {
        return Err(Error::Format(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != LMEL_VERSION {
        return Err(Error::Format(format!("{}: unsupported version {version}", path.display())));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mel_bins = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + frames * mel_bins * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes for {frames}x{mel_bins} payload, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Spectrogram::new(values, frames, mel_bins)
}
