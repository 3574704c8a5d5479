//! Audio ingestion and the log-Mel front end.
//!
//! PCM heart-sound recordings become `frames x mel_bins` log-Mel
//! spectrograms: Hamming-windowed power spectra (256-sample window, 128
//! hop), a 64-triangle mel filterbank over 0..Nyquist, and a natural log
//! with a 1e-10 floor. A 30 s clip at 4 kHz yields exactly 936 frames.

mod cache;
mod mel;
mod stft;
pub mod wav;

pub use cache::{read_lmel, write_lmel, LMEL_MAGIC, LMEL_VERSION};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use stft::{frame_count, hamming, stft_power};
pub use wav::{load_wav, write_wav_mono16};

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Analysis window length in samples.
pub const STFT_WINDOW: usize = 256;
/// Hop between windows (50 % overlap).
pub const STFT_HOP: usize = 128;
/// Retained DFT bins: window/2 + 1.
pub const STFT_BINS: usize = STFT_WINDOW / 2 + 1;
/// Mel bins of the default representation.
pub const DEFAULT_MEL_BINS: usize = 64;
/// Expected corpus sample rate in Hz.
pub const EXPECTED_SAMPLE_RATE: u32 = 4000;
/// Energy floor added before the log; silent input maps to `ln(1e-10)`.
pub const LOG_FLOOR: f64 = 1e-10;

/// Row-major f64 matrix used by the DSP stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_path: String,
}

/// Log-Mel feature matrix with extraction provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `frames x mel_bins` log-Mel energies.
    pub values: Vec<f32>,
    pub frames: usize,
    pub mel_bins: usize,
    pub window: usize,
    pub hop: usize,
    /// Frame count before any truncation/padding by [`Spectrogram::fit_frames`].
    pub source_frames: usize,
}

impl Spectrogram {
    pub fn new(values: Vec<f32>, frames: usize, mel_bins: usize) -> Result<Self> {
        if values.len() != frames * mel_bins {
            return Err(Error::Dim(format!(
                "spectrogram of {frames}x{mel_bins} needs {} values, got {}",
                frames * mel_bins,
                values.len()
            )));
        }
        Ok(Spectrogram {
            values,
            frames,
            mel_bins,
            window: STFT_WINDOW,
            hop: STFT_HOP,
            source_frames: frames,
        })
    }

    /// Truncate or pad (with the log floor value) to exactly `target` frames.
    /// The pre-fit frame count is kept in `source_frames`.
    pub fn fit_frames(mut self, target: usize) -> Self {
        let floor = LOG_FLOOR.ln() as f32;
        let source = self.source_frames;
        self.values.resize(target * self.mel_bins, floor);
        self.frames = target;
        self.source_frames = source;
        self
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        Tensor::new(
            vec![self.frames, self.mel_bins],
            self.values.iter().map(|&v| F::from_f32(v)).collect(),
        )
        .expect("spectrogram dimensions consistent")
    }
}

/// Front-end configuration. Defaults give the 936x64 representation for a
/// 30 s, 4 kHz clip.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub f_min: f64,
    /// Upper mel edge; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: EXPECTED_SAMPLE_RATE,
            window: STFT_WINDOW,
            hop: STFT_HOP,
            mel_bins: DEFAULT_MEL_BINS,
            f_min: 0.0,
            f_max: None,
        }
    }
}

/// Convert a clip to its log-Mel spectrogram: `ln(power . filterbank^T + 1e-10)`.
///
/// Per-corpus standardization is applied by the trainer, not here. Clips at
/// a sample rate other than the configured one are rejected; resampling is
/// out of scope.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Spectrogram> {
    if clip.sample_rate != cfg.sample_rate {
        return Err(Error::Input(format!(
            "clip {} has sample rate {}, expected {}",
            clip.source_path, clip.sample_rate, cfg.sample_rate
        )));
    }
    let power = stft_power(clip, cfg.window, cfg.hop)?;
    let fft_bins = cfg.window / 2 + 1;
    let f_max = cfg.f_max.unwrap_or(cfg.sample_rate as f64 / 2.0);
    let fb = mel_filterbank(cfg.mel_bins, fft_bins, cfg.sample_rate, cfg.f_min, f_max)?;

    let frames = power.rows;
    let mut values = vec![0.0f32; frames * cfg.mel_bins];
    for t in 0..frames {
        for j in 0..cfg.mel_bins {
            let mut acc = 0.0f64;
            for k in 0..fft_bins {
                acc += power[(t, k)] * fb[(j, k)];
            }
            values[t * cfg.mel_bins + j] = (acc + LOG_FLOOR).ln() as f32;
        }
    }
    let mut spec = Spectrogram::new(values, frames, cfg.mel_bins)?;
    spec.window = cfg.window;
    spec.hop = cfg.hop;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip { samples, sample_rate: 4000, source_path: "test".into() }
    }

    #[test]
    fn thirty_second_clip_gives_936_by_64() {
        let c = clip(vec![0.01; 120_000]);
        let s = log_mel(&c, &FeatureConfig::default()).unwrap();
        assert_eq!((s.frames, s.mel_bins), (936, 64));
    }

    #[test]
    fn silent_input_hits_the_log_floor() {
        let c = clip(vec![0.0; 1024]);
        let s = log_mel(&c, &FeatureConfig::default()).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(s.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn random_input_stays_finite() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        let c = clip((0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let s = log_mel(&c, &FeatureConfig::default()).unwrap();
        assert!(s.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let c = AudioClip { samples: vec![0.0; 8000], sample_rate: 8000, source_path: "x".into() };
        assert!(matches!(log_mel(&c, &FeatureConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn fit_frames_truncates_and_pads() {
        let c = clip(vec![0.5; 10_000]);
        let s = log_mel(&c, &FeatureConfig::default()).unwrap();
        let natural = s.frames;

        let padded = s.clone().fit_frames(natural + 10);
        assert_eq!(padded.frames, natural + 10);
        assert_eq!(padded.source_frames, natural);
        let floor = LOG_FLOOR.ln() as f32;
        assert!(padded.values[natural * 64..].iter().all(|&v| v == floor));

        let cut = s.fit_frames(natural - 5);
        assert_eq!(cut.frames, natural - 5);
        assert_eq!(cut.source_frames, natural);
    }

    #[test]
    fn identical_input_gives_bitwise_identical_features() {
        let samples: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
        let a = log_mel(&clip(samples.clone()), &FeatureConfig::default()).unwrap();
        let b = log_mel(&clip(samples), &FeatureConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
