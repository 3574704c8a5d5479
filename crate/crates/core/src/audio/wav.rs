//! Minimal RIFF/WAVE reader and writer.
//!
//! Supports 16-bit PCM and 32-bit IEEE float, any channel count
//! (multichannel is averaged to mono). Everything else is an unsupported
//! codec. Parse failures name the chunk at fault.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::audio::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

fn parse_err(chunk: &str, reason: impl Into<String>) -> Error {
    Error::WavParse { chunk: chunk.to_string(), reason: reason.into() }
}

fn u16_at(bytes: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([bytes[off], bytes[off + 1]])
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
}

/// Read a WAV file into a mono clip with samples in [-1, 1].
///
/// 16-bit samples are scaled by 1/32768; float samples are clamped to the
/// valid range. Multichannel input becomes the per-frame channel mean.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Ingest(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 12 {
        return Err(parse_err("RIFF", "file shorter than a RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(parse_err("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(parse_err("RIFF", "container is not WAVE"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = u32_at(&bytes, off + 4) as usize;
        let body_start = off + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            let name = String::from_utf8_lossy(id).into_owned();
            return Err(parse_err(&name, format!("chunk body truncated ({size} bytes declared)")));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(parse_err("fmt ", format!("chunk too short ({size} bytes)")));
                }
                fmt = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {}
        }
        // Chunk bodies are padded to even length.
        off = body_end + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| parse_err("fmt ", "chunk missing"))?;
    let data = data.ok_or_else(|| parse_err("data", "chunk missing"))?;
    if channels == 0 {
        return Err(parse_err("fmt ", "zero channels"));
    }
    if sample_rate == 0 {
        return Err(parse_err("fmt ", "zero sample rate"));
    }

    let samples: Vec<f64> = match (format, bits) {
        (FORMAT_PCM, 16) => {
            let frame = 2 * channels as usize;
            if data.len() % frame != 0 {
                return Err(parse_err("data", "length is not a whole number of frames"));
            }
            data.chunks_exact(frame)
                .map(|fr| {
                    let mut acc = 0.0;
                    for ch in 0..channels as usize {
                        let s = i16::from_le_bytes([fr[2 * ch], fr[2 * ch + 1]]);
                        acc += s as f64 / 32768.0;
                    }
                    acc / channels as f64
                })
                .collect()
        }
        (FORMAT_IEEE_FLOAT, 32) => {
            let frame = 4 * channels as usize;
            if data.len() % frame != 0 {
                return Err(parse_err("data", "length is not a whole number of frames"));
            }
            data.chunks_exact(frame)
                .map(|fr| {
                    let mut acc = 0.0;
                    for ch in 0..channels as usize {
                        let s = f32::from_le_bytes([
                            fr[4 * ch],
                            fr[4 * ch + 1],
                            fr[4 * ch + 2],
                            fr[4 * ch + 3],
                        ]);
                        acc += (s as f64).clamp(-1.0, 1.0);
                    }
                    acc / channels as f64
                })
                .collect()
        }
        _ => {
            return Err(parse_err(
                "fmt ",
                format!("unsupported codec: format {format}, {bits} bits per sample"),
            ))
        }
    };
    if samples.is_empty() {
        return Err(parse_err("data", "no samples"));
    }

    Ok(AudioClip {
        samples,
        sample_rate,
        source_path: path.display().to_string(),
    })
}

/// Write a mono 16-bit PCM WAV file. Samples are clamped to [-1, 1].
pub fn write_wav_mono16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes_16(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
        let data_len = samples.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    fn load_from_bytes(bytes: &[u8]) -> Result<AudioClip> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        std::fs::write(&p, bytes).unwrap();
        load_wav(&p)
    }

    #[test]
    fn sixteen_bit_scaling() {
        let clip = load_from_bytes(&wav_bytes_16(1, 4000, &[16384, -32768, 0])).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0, 0.0]);
        assert_eq!(clip.sample_rate, 4000);
    }

    #[test]
    fn thirty_seconds_at_4khz_is_120000_samples() {
        let samples = vec![0i16; 30 * 4000];
        let clip = load_from_bytes(&wav_bytes_16(1, 4000, &samples)).unwrap();
        assert_eq!(clip.samples.len(), 120_000);
    }

    #[test]
    fn stereo_averages_to_mono() {
        // 0.2 and 0.4 in 16-bit units.
        let l = (0.2f64 * 32768.0) as i16;
        let r = (0.4f64 * 32768.0) as i16;
        let clip = load_from_bytes(&wav_bytes_16(2, 4000, &[l, r])).unwrap();
        assert!((clip.samples[0] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn malformed_header_names_chunk() {
        let err = load_from_bytes(b"RIFFxxxxWAVX").unwrap_err();
        match err {
            Error::WavParse { chunk, .. } => assert_eq!(chunk, "RIFF"),
            other => panic!("unexpected error {other:?}"),
        }

        let mut truncated = wav_bytes_16(1, 4000, &[1, 2, 3, 4]);
        truncated.truncate(truncated.len() - 3);
        let err = load_from_bytes(&truncated).unwrap_err();
        match err {
            Error::WavParse { chunk, .. } => assert_eq!(chunk, "data"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unsupported_codec_rejected() {
        let mut bytes = wav_bytes_16(1, 4000, &[0, 0]);
        bytes[20] = 2; // ADPCM
        let err = load_from_bytes(&bytes).unwrap_err();
        match err {
            Error::WavParse { chunk, reason } => {
                assert_eq!(chunk, "fmt ");
                assert!(reason.contains("unsupported codec"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn writer_reader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 / 50.0 - 1.0) * 0.9).collect();
        write_wav_mono16(&p, &samples, 4000).unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 100);
        for (a, b) in clip.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
