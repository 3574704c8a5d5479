//! Triangular mel filterbank on the HTK mel scale.

use crate::audio::Mat;
use crate::error::{Error, Result};

/// HTK mel scale: `2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Build a `num_bins x fft_bins` filterbank of triangular filters whose
/// centers are equally spaced in mel between `f_min` and `f_max`.
pub fn mel_filterbank(
    num_bins: usize,
    fft_bins: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<Mat> {
    if num_bins == 0 || fft_bins < 2 {
        return Err(Error::Config(format!(
            "filterbank needs at least one mel bin and two fft bins, got {num_bins}/{fft_bins}"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::Config(format!(
            "invalid frequency range [{f_min}, {f_max}] for sample rate {sample_rate}"
        )));
    }

    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..num_bins + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_bins + 1) as f64))
        .collect();

    // fft bin k sits at k * sample_rate / n_fft.
    let n_fft = 2 * (fft_bins - 1);
    let mut fb = Mat::zeros(num_bins, fft_bins);
    for j in 0..num_bins {
        let (lo, center, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        for k in 0..fft_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            fb[(j, k)] = rising.min(falling).max(0.0);
        }
    }
    Ok(fb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_of_1000_hz() {
        // Direct evaluation of 2595 log10(1 + 1000/700).
        let v = hz_to_mel(1000.0);
        assert!((v - 999.9855371396244).abs() < 1e-9, "{v}");
        assert!(hz_to_mel(0.0).abs() < 1e-12);
        let back = mel_to_hz(v);
        assert!((back - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn filters_are_nonnegative_with_contiguous_support() {
        let fb = mel_filterbank(64, 129, 4000, 0.0, 2000.0).unwrap();
        for j in 0..64 {
            let row: Vec<f64> = (0..129).map(|k| fb[(j, k)]).collect();
            assert!(row.iter().all(|&v| v >= 0.0));
            let positive: Vec<usize> =
                (0..129).filter(|&k| row[k] > 0.0).collect();
            assert!(!positive.is_empty(), "filter {j} has empty support");
            for pair in positive.windows(2) {
                assert_eq!(pair[1], pair[0] + 1, "filter {j} support not contiguous");
            }
        }
    }

    #[test]
    fn centers_increase_monotonically_in_hz() {
        let mel_lo = hz_to_mel(0.0);
        let mel_hi = hz_to_mel(2000.0);
        let mut prev = -1.0;
        for i in 0..66 {
            let hz = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / 65.0);
            assert!(hz > prev);
            prev = hz;
        }
    }

    #[test]
    fn invalid_range_is_config_error() {
        assert!(matches!(
            mel_filterbank(64, 129, 4000, 0.0, 2500.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            mel_filterbank(64, 129, 4000, 300.0, 200.0),
            Err(Error::Config(_))
        ));
    }
}
