use std::path::Path;

use crate::error::{DsrError, Result};

use super::SAMPLE_RATE;

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(DsrError::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(DsrError::Shape(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Rounds to the 16-bit grid used on disk.
    pub fn quantized(&self) -> Self {
        let samples = self.samples.iter().map(|&v| quantize(v) as f64 / 32768.0).collect();
        Self { samples, sample_rate_hz: self.sample_rate_hz }
    }
}

fn quantize(v: f64) -> i16 {
    (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Reads mono 16-bit PCM at 16 kHz.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(DsrError::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(DsrError::Corpus(format!("{}: expected mono 16-bit PCM", path.display())));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(DsrError::Corpus(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &v in &wav.samples {
        writer.write_sample(quantize(v))?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_exact_on_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let wav = Waveform::new((0..500).map(|i| ((i as f64) * 0.01).sin() * 0.5).collect(), SAMPLE_RATE)
            .unwrap()
            .quantized();
        write_wav(&path, &wav).unwrap();
        assert_eq!(read_wav(&path).unwrap(), wav);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f64::NAN], SAMPLE_RATE).is_err());
    }
}
