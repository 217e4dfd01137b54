//! Deterministic audio analysis: mel spectrograms, deltas, F0, normalisation
//! statistics and alignment ingestion.

mod alignment;
mod delta;
mod f0;
pub mod inversion;
mod mel;
mod stats;
mod wav;

pub use alignment::{load_alignment, parse_alignment, read_alignment, PhonemeAlignment};
pub use delta::{append_deltas, delta, FeatureMatrix, FEATURE_DIM};
pub use f0::{extract_f0, F0Track, F0_MAX_HZ, F0_MIN_HZ, VOICING_THRESHOLD};
pub use mel::{mel_spectrogram, MelAnalyzer, MelFilterbank, MelSpectrogram, Stft, LOG_FLOOR};
pub use stats::{compute_stats, NormStats, STD_FLOOR};
pub use wav::{read_wav, write_wav, Waveform};

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// STFT framing and mel resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub fft_size: usize,
    pub window_len: usize,
    pub hop_len: usize,
    pub n_mels: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { fft_size: 400, window_len: 400, hop_len: 160, n_mels: 80 }
    }
}

impl FrameConfig {
    /// 40-band analysis used for encoder inputs.
    pub fn mel40() -> Self {
        Self { n_mels: 40, ..Self::default() }
    }

    /// 80-band analysis used for generator targets.
    pub fn mel80() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mels != 40 && self.n_mels != 80 {
            return Err(DsrError::FrameConfig(format!("n_mels must be 40 or 80, got {}", self.n_mels)));
        }
        if self.hop_len == 0 || self.hop_len > self.window_len || self.window_len > self.fft_size {
            return Err(DsrError::FrameConfig(format!(
                "need 0 < hop ({}) <= window ({}) <= fft ({})",
                self.hop_len, self.window_len, self.fft_size
            )));
        }
        Ok(())
    }

    /// `1 + floor((n − window) / hop)`; errors when shorter than one window.
    pub fn frame_count(&self, n_samples: usize) -> Result<usize> {
        if n_samples < self.window_len {
            return Err(DsrError::UtteranceTooShort { samples: n_samples, window: self.window_len });
        }
        Ok(1 + (n_samples - self.window_len) / self.hop_len)
    }

    /// Number of samples that yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        assert!(frames >= 1);
        self.window_len + (frames - 1) * self.hop_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_second_is_98_frames() {
        assert_eq!(FrameConfig::default().frame_count(16_000).unwrap(), 98);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(FrameConfig { n_mels: 64, ..Default::default() }.validate().is_err());
        assert!(FrameConfig { hop_len: 500, ..Default::default() }.validate().is_err());
        assert!(FrameConfig { window_len: 512, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn frame_count_formula(n in 400usize..50_000, hop in 1usize..=400) {
            let cfg = FrameConfig { hop_len: hop, ..Default::default() };
            let frames = cfg.frame_count(n).unwrap();
            // last frame fits, one more would not
            prop_assert!((frames - 1) * hop + 400 <= n);
            prop_assert!(frames * hop + 400 > n);
        }
    }
}
