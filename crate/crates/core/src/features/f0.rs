//! Normalised-autocorrelation pitch tracking.

use super::{FrameConfig, Waveform};
use crate::error::Result;

pub const F0_MIN_HZ: f64 = 60.0;
pub const F0_MAX_HZ: f64 = 400.0;
/// A frame is voiced when its best normalised autocorrelation peak exceeds this.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Among peaks within this fraction of the best one, the shortest lag wins
/// (suppresses sub-octave picks on strongly periodic frames).
const OCTAVE_GUARD: f64 = 0.85;
const SILENCE_POWER: f64 = 1e-10;

/// Per-frame natural-log F0 and voicing. Unvoiced frames store `0.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    pub log_f0: Vec<f64>,
    pub voicing: Vec<bool>,
}

impl F0Track {
    pub fn frames(&self) -> usize {
        self.log_f0.len()
    }

    pub fn truncated(&self, frames: usize) -> Self {
        let n = frames.min(self.frames());
        Self { log_f0: self.log_f0[..n].to_vec(), voicing: self.voicing[..n].to_vec() }
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.voicing.is_empty() {
            return 0.0;
        }
        self.voicing.iter().filter(|&&v| v).count() as f64 / self.voicing.len() as f64
    }

    /// Log-F0 with unvoiced gaps filled by linear interpolation and the ends
    /// held at the nearest voiced value. All zeros when nothing is voiced.
    pub fn interpolated(&self) -> Vec<f64> {
        let voiced: Vec<usize> = (0..self.frames()).filter(|&i| self.voicing[i]).collect();
        let (Some(&first), Some(&last)) = (voiced.first(), voiced.last()) else {
            return vec![0.0; self.frames()];
        };
        let mut out = self.log_f0.clone();
        out[..first].fill(self.log_f0[first]);
        out[last + 1..].fill(self.log_f0[last]);
        for w in voiced.windows(2) {
            let (a, b) = (w[0], w[1]);
            for (i, slot) in out.iter_mut().enumerate().take(b).skip(a + 1) {
                let frac = (i - a) as f64 / (b - a) as f64;
                *slot = self.log_f0[a] + frac * (self.log_f0[b] - self.log_f0[a]);
            }
        }
        out
    }
}

/// Normalised autocorrelation of `x` at `lag` over the overlapping span.
fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (a, b) = (&x[..n], &x[lag..]);
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        xy += a[i] * b[i];
        xx += a[i] * a[i];
        yy += b[i] * b[i];
    }
    let denom = (xx * yy).sqrt();
    if denom > 0.0 {
        xy / denom
    } else {
        0.0
    }
}

fn frame_pitch(frame: &[f64], sample_rate: f64) -> Option<f64> {
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    if x.iter().map(|v| v * v).sum::<f64>() / (x.len() as f64) < SILENCE_POWER {
        return None;
    }
    let lag_min = (sample_rate / F0_MAX_HZ).ceil() as usize;
    let lag_max = ((sample_rate / F0_MIN_HZ).floor() as usize).min(x.len() - 2);
    if lag_min + 1 >= lag_max {
        return None;
    }
    let r: Vec<f64> = (lag_min - 1..=lag_max + 1).map(|lag| normalized_autocorr(&x, lag)).collect();
    let at = |lag: usize| r[lag + 1 - lag_min];
    let peaks: Vec<usize> =
        (lag_min..=lag_max).filter(|&l| at(l) >= at(l - 1) && at(l) >= at(l + 1)).collect();
    let best = peaks.iter().map(|&l| at(l)).fold(f64::NEG_INFINITY, f64::max);
    if !(best > VOICING_THRESHOLD) {
        return None;
    }
    let lag = *peaks.iter().find(|&&l| at(l) >= OCTAVE_GUARD * best)?;
    let (ym, y0, yp) = (at(lag - 1), at(lag), at(lag + 1));
    let curv = ym - 2.0 * y0 + yp;
    let shift = if curv < 0.0 { (0.5 * (ym - yp) / curv).clamp(-0.5, 0.5) } else { 0.0 };
    Some(sample_rate / (lag as f64 + shift))
}

/// Hop-synchronous F0 over the same frames as the mel analysis.
pub fn extract_f0(wav: &Waveform, cfg: &FrameConfig) -> Result<F0Track> {
    let frames = cfg.frame_count(wav.len())?;
    let sr = wav.sample_rate_hz as f64;
    let mut log_f0 = Vec::with_capacity(frames);
    let mut voicing = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * cfg.hop_len;
        match frame_pitch(&wav.samples[start..start + cfg.window_len], sr) {
            Some(f0) => {
                log_f0.push(f0.ln());
                voicing.push(true);
            }
            None => {
                log_f0.push(0.0);
                voicing.push(false);
            }
        }
    }
    Ok(F0Track { log_f0, voicing })
}
