use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FrameConfig, Waveform};
use crate::error::{DsrError, Result};

/// Energies below this are clamped before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

pub const MEL_FMAX_HZ: f64 = 8000.0;

/// Log-compressed mel energies, `frames × n_mels`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub config: FrameConfig,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }

    /// Keeps the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> Self {
        let n = frames.min(self.frames());
        Self { values: self.values.slice(ndarray::s![..n, ..]).to_owned(), config: self.config }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular, area-normalised filters spanning 0–8 kHz on the HTK mel scale.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `n_mels × (fft_size/2 + 1)`
    pub weights: Array2<f64>,
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32) -> Self {
        let n_bins = fft_size / 2 + 1;
        let fmax = MEL_FMAX_HZ.min(sample_rate as f64 / 2.0);
        let top = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = Array2::zeros((n_mels, n_bins));
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[[m, k]] = w * norm;
            }
        }
        Self { weights, centers_hz: edges[1..=n_mels].to_vec() }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    /// Least-squares inverse mapping mel energies back to linear bins.
    pub fn pseudo_inverse(&self) -> Array2<f64> {
        let (r, c) = self.weights.dim();
        let m = nalgebra::DMatrix::from_fn(r, c, |i, j| self.weights[[i, j]]);
        let pinv = m.pseudo_inverse(1e-12).expect("svd of filterbank");
        Array2::from_shape_fn((c, r), |(i, j)| pinv[(i, j)])
    }
}

/// Windowed power-spectrum analyser with a cached FFT plan.
pub struct Stft {
    config: FrameConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: FrameConfig) -> Result<Self> {
        config.validate()?;
        let n = config.window_len;
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self { config, window, fft })
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Complex spectrum of every frame, `frames × (fft/2 + 1)`.
    pub fn spectrum(&self, samples: &[f64]) -> Result<Array2<Complex<f64>>> {
        let cfg = &self.config;
        let frames = cfg.frame_count(samples.len())?;
        let n_bins = cfg.fft_size / 2 + 1;
        let mut out = Array2::from_elem((frames, n_bins), Complex::new(0.0, 0.0));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for t in 0..frames {
            let start = t * cfg.hop_len;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, w) in self.window.iter().enumerate() {
                buf[i] = Complex::new(samples[start + i] * w, 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..n_bins {
                out[[t, k]] = buf[k];
            }
        }
        Ok(out)
    }

    pub fn power(&self, samples: &[f64]) -> Result<Array2<f64>> {
        Ok(self.spectrum(samples)?.mapv(|c| c.norm_sqr()))
    }
}

/// Log-mel analysis with filterbank and FFT plan reused across calls.
pub struct MelAnalyzer {
    stft: Stft,
    bank: MelFilterbank,
    config: FrameConfig,
}

impl MelAnalyzer {
    pub fn new(config: FrameConfig) -> Result<Self> {
        let stft = Stft::new(config)?;
        let bank = MelFilterbank::new(config.n_mels, config.fft_size, super::SAMPLE_RATE);
        Ok(Self { stft, bank, config })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn analyze(&self, wav: &Waveform) -> Result<MelSpectrogram> {
        if wav.is_empty() {
            return Err(DsrError::UtteranceTooShort { samples: 0, window: self.config.window_len });
        }
        let power = self.stft.power(&wav.samples)?;
        let mel = power.dot(&self.bank.weights.t());
        Ok(MelSpectrogram { values: mel.mapv(|e| e.max(LOG_FLOOR).ln()), config: self.config })
    }
}

pub fn mel_spectrogram(wav: &Waveform, cfg: &FrameConfig) -> Result<MelSpectrogram> {
    MelAnalyzer::new(*cfg)?.analyze(wav)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SAMPLE_RATE;

    fn sine(hz: f64, n: usize) -> Waveform {
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / SAMPLE_RATE as f64).sin())
            .collect();
        Waveform::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let mel = mel_spectrogram(&sine(440.0, 16_000), &FrameConfig::default()).unwrap();
        assert_eq!(mel.values.dim(), (98, 80));
    }

    #[test]
    fn silence_hits_the_floor() {
        let wav = Waveform::new(vec![0.0; 4000], SAMPLE_RATE).unwrap();
        let mel = mel_spectrogram(&wav, &FrameConfig::mel40()).unwrap();
        assert!(mel.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn too_short_is_an_error() {
        let wav = Waveform::new(vec![0.1; 399], SAMPLE_RATE).unwrap();
        let err = mel_spectrogram(&wav, &FrameConfig::default()).unwrap_err();
        assert!(err.to_string().contains("utterance too short"));
        let empty = Waveform::new(vec![], SAMPLE_RATE).unwrap();
        assert!(mel_spectrogram(&empty, &FrameConfig::default()).is_err());
    }

    #[test]
    fn every_filter_is_non_empty() {
        for n in [40, 80] {
            let bank = MelFilterbank::new(n, 400, SAMPLE_RATE);
            for row in bank.weights.rows() {
                assert!(row.sum() > 0.0);
            }
        }
    }

    /// Direct O(N²) DFT of one windowed frame; independent of rustfft.
    fn direct_power(frame: &[f64], fft_size: usize) -> Vec<f64> {
        (0..=fft_size / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / fft_size as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn sine_peaks_in_band_nearest_its_frequency() {
        let cfg = FrameConfig::mel40();
        let wav = sine(1000.0, 4000);
        let analyzer = MelAnalyzer::new(cfg).unwrap();
        let mel = analyzer.analyze(&wav).unwrap();
        let bank = analyzer.filterbank();
        let nearest = bank
            .centers_hz
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;

        // oracle: direct DFT of frame 3 through the same filters
        let stft = Stft::new(cfg).unwrap();
        let frame: Vec<f64> = (0..400).map(|i| wav.samples[3 * 160 + i] * stft.window()[i]).collect();
        let power = direct_power(&frame, 400);
        let oracle: Vec<f64> = bank.weights.rows().into_iter().map(|r| r.iter().zip(&power).map(|(w, p)| w * p).sum()).collect();
        let oracle_arg = oracle.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        for (m, o) in oracle.iter().enumerate() {
            assert!((mel.values[[3, m]] - o.max(LOG_FLOOR).ln()).abs() < 1e-6);
        }

        for row in mel.values.rows() {
            let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(arg, nearest);
        }
        assert_eq!(oracle_arg, nearest);
    }

    #[test]
    fn deterministic_bits() {
        let wav = sine(321.0, 8000);
        let a = mel_spectrogram(&wav, &FrameConfig::default()).unwrap();
        let b = mel_spectrogram(&wav, &FrameConfig::default()).unwrap();
        assert!(a.values.iter().zip(b.values.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
