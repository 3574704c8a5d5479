//! Short-time power spectra with a Hamming window.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::{AudioClip, Mat};
use crate::error::{Error, Result};

/// Hamming window, symmetric form: `0.54 - 0.46 cos(2 pi n / (L - 1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Frame count of a clip of `n` samples: `floor((n - window) / hop) + 1`.
pub fn frame_count(n: usize, window: usize, hop: usize) -> Option<usize> {
    if n < window {
        None
    } else {
        Some((n - window) / hop + 1)
    }
}

/// Windowed power spectrogram: rows are frames, columns the first
/// `window/2 + 1` magnitude-squared DFT bins.
///
/// Total kept power per frame is bounded by `window * sum((x * w)^2)`
/// (Parseval for the full length-`window` DFT; dropped conjugate bins only
/// shrink it).
pub fn stft_power(clip: &AudioClip, window: usize, hop: usize) -> Result<Mat> {
    let n = clip.samples.len();
    let frames = frame_count(n, window, hop).ok_or_else(|| {
        Error::Input(format!("clip of {n} samples is shorter than one window of {window}"))
    })?;
    let bins = window / 2 + 1;
    let w = hamming(window);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut out = Mat::zeros(frames, bins);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for f in 0..frames {
        let start = f * hop;
        for i in 0..window {
            buf[i] = Complex::new(clip.samples[start + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            out[(f, k)] = c.norm_sqr();
        }
    }
    Ok(out)
}
