//! Mel inversion: pseudo-inverse filterbanks and Griffin–Lim phase recovery.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::mel::{MelFilterbank, Stft, LOG_FLOOR};
use super::{FrameConfig, Waveform, SAMPLE_RATE};
use crate::error::{DsrError, Result};

pub const GL_ITERATIONS: usize = 60;
pub const GL_MOMENTUM: f64 = 0.99;

/// Linear power spectrum from a log-mel spectrogram, clipped at zero.
pub fn mel_to_power(log_mel: &Array2<f64>, bank: &MelFilterbank) -> Result<Array2<f64>> {
    if log_mel.ncols() != bank.n_mels() {
        return Err(DsrError::Shape(format!("{} mel bands for a {}-band filterbank", log_mel.ncols(), bank.n_mels())));
    }
    let energy = log_mel.mapv(f64::exp);
    Ok(energy.dot(&bank.pseudo_inverse().t()).mapv(|v| v.max(0.0)))
}

/// Re-bands an 80-band log-mel spectrogram to 40 bands through the linear
/// power spectrum.
pub fn mel80_to_mel40(log_mel80: &Array2<f64>) -> Result<Array2<f64>> {
    let c80 = FrameConfig::mel80();
    let bank80 = MelFilterbank::new(80, c80.fft_size, SAMPLE_RATE);
    let bank40 = MelFilterbank::new(40, c80.fft_size, SAMPLE_RATE);
    let power = mel_to_power(log_mel80, &bank80)?;
    Ok(power.dot(&bank40.weights.t()).mapv(|e| e.max(LOG_FLOOR).ln()))
}

/// Weighted overlap-add inverse of [`Stft::spectrum`]; exact wherever the
/// squared windows do not vanish.
pub fn istft(spec: &Array2<Complex<f64>>, cfg: &FrameConfig, window: &[f64]) -> Vec<f64> {
    let (frames, bins) = spec.dim();
    let n = cfg.fft_size;
    let len = cfg.samples_for_frames(frames.max(1));
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        for k in 0..n {
            buf[k] = if k < bins { spec[[t, k]] } else { spec[[t, n - k]].conj() };
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop_len;
        for (i, w) in window.iter().enumerate() {
            out[start + i] += w * buf[i].re / n as f64;
            norm[start + i] += w * w;
        }
    }
    for (o, z) in out.iter_mut().zip(&norm) {
        *o = if *z > 1e-12 { *o / z } else { 0.0 };
    }
    out
}

/// Fast Griffin–Lim with momentum from a magnitude spectrogram.
pub fn griffin_lim(magnitude: &Array2<f64>, cfg: &FrameConfig, iterations: usize, momentum: f64, seed: u64) -> Result<Vec<f64>> {
    let (frames, bins) = magnitude.dim();
    if frames == 0 {
        return Err(DsrError::Empty("no frames to invert".into()));
    }
    if bins != cfg.fft_size / 2 + 1 {
        return Err(DsrError::Shape(format!("{bins} bins for fft size {}", cfg.fft_size)));
    }
    let stft = Stft::new(*cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = magnitude.mapv(|m| Complex::from_polar(m, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
    let mut prev = c.clone();
    for _ in 0..iterations {
        let x = istft(&c, cfg, stft.window());
        let rebuilt = stft.spectrum(&x)?;
        let projected = Array2::from_shape_fn((frames, bins), |(t, k)| {
            let z = rebuilt[[t, k]];
            let r = z.norm();
            if r > 0.0 { z * (magnitude[[t, k]] / r) } else { Complex::new(magnitude[[t, k]], 0.0) }
        });
        c = &projected + &((&projected - &prev) * Complex::new(momentum, 0.0));
        prev = projected;
    }
    Ok(istft(&c, cfg, stft.window()))
}

/// Waveform from an 80-band log-mel spectrogram.
pub fn mel_to_waveform(log_mel80: &Array2<f64>, iterations: usize, seed: u64) -> Result<Waveform> {
    let cfg = FrameConfig::mel80();
    let bank = MelFilterbank::new(cfg.n_mels, cfg.fft_size, SAMPLE_RATE);
    let mag = mel_to_power(log_mel80, &bank)?.mapv(f64::sqrt);
    let mut samples = griffin_lim(&mag, &cfg, iterations, GL_MOMENTUM, seed)?;
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        samples.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// `‖|X| − S‖_F / ‖S‖_F` between a signal's magnitude and a target.
pub fn spectral_convergence(samples: &[f64], magnitude: &Array2<f64>, cfg: &FrameConfig) -> Result<f64> {
    let got = Stft::new(*cfg)?.spectrum(samples)?.mapv(|z| z.norm());
    if got.dim() != magnitude.dim() {
        return Err(DsrError::Shape("magnitude shapes differ".into()));
    }
    let num: f64 = (&got - magnitude).mapv(|v| v * v).sum();
    let den: f64 = magnitude.mapv(|v| v * v).sum();
    Ok((num / den.max(1e-30)).sqrt())
}
