use ndarray::{concatenate, Array2, Axis};

use super::MelSpectrogram;
use crate::error::{DsrError, Result};

pub const FEATURE_DIM: usize = 120;

/// 40 mel + 40 delta + 40 delta-delta columns per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }
}

/// Two-frame regression `(x[t+1] − x[t−1]) / 2`, edges replicated.
pub fn delta(x: &Array2<f64>) -> Array2<f64> {
    let t = x.nrows();
    let mut out = Array2::zeros(x.dim());
    for i in 0..t {
        let next = x.row((i + 1).min(t - 1));
        let prev = x.row(i.saturating_sub(1));
        out.row_mut(i).assign(&((&next - &prev) * 0.5));
    }
    out
}

pub fn append_deltas(mel: &MelSpectrogram) -> Result<FeatureMatrix> {
    if mel.n_mels() != 40 {
        return Err(DsrError::Shape(format!("append_deltas expects 40 mel bands, got {}", mel.n_mels())));
    }
    if mel.frames() == 0 {
        return Err(DsrError::Empty("mel spectrogram has no frames".into()));
    }
    let d1 = delta(&mel.values);
    let d2 = delta(&d1);
    let values = concatenate(Axis(1), &[mel.values.view(), d1.view(), d2.view()]).expect("equal rows");
    Ok(FeatureMatrix { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FrameConfig;

    fn mel(values: Array2<f64>) -> MelSpectrogram {
        MelSpectrogram { values, config: FrameConfig::mel40() }
    }

    #[test]
    fn constant_has_zero_deltas() {
        let f = append_deltas(&mel(Array2::from_elem((7, 40), -3.5))).unwrap();
        assert_eq!(f.values.ncols(), FEATURE_DIM);
        assert!(f.values.slice(ndarray::s![.., 40..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_has_zero_deltas() {
        let f = append_deltas(&mel(Array2::from_shape_fn((1, 40), |(_, j)| j as f64))).unwrap();
        assert!(f.values.slice(ndarray::s![.., 40..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_has_slope_delta_inside() {
        let s = 0.75;
        let f = append_deltas(&mel(Array2::from_shape_fn((10, 40), |(t, j)| s * t as f64 + j as f64))).unwrap();
        for t in 1..9 {
            for j in 40..80 {
                assert!((f.values[[t, j]] - s).abs() < 1e-12);
            }
        }
        // replicated edge: (x1 − x0) / 2
        assert!((f.values[[0, 40]] - s / 2.0).abs() < 1e-12);
        // second derivative vanishes away from the edges
        for t in 2..8 {
            assert!(f.values[[t, 80]].abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_width_rejected() {
        let m = MelSpectrogram { values: Array2::zeros((5, 80)), config: FrameConfig::mel80() };
        assert!(append_deltas(&m).is_err());
    }
}
