//! Distances and error rates.

use ndarray::Array2;

use crate::error::{DsrError, Result};
use crate::models::generation_loss_value;

/// Edit distance with unit substitution, insertion and deletion costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1).min(row[j] + 1).min(diag + usize::from(x != y));
            diag = up;
        }
    }
    row[b.len()]
}

/// Edit distance over reference length.
pub fn phoneme_error_rate(hypothesis: &[usize], reference: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(DsrError::Empty("reference phoneme sequence is empty".into()));
    }
    Ok(levenshtein(hypothesis, reference) as f64 / reference.len() as f64)
}

fn frame_distance(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum-cost monotonic alignment with unit steps; returns the total cost
/// and the number of aligned pairs on the best path.
pub fn dtw(a: &Array2<f64>, b: &Array2<f64>) -> Result<(f64, usize)> {
    if a.ncols() != b.ncols() {
        return Err(DsrError::Shape(format!("dtw: {} vs {} columns", a.ncols(), b.ncols())));
    }
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(DsrError::Empty("dtw on an empty sequence".into()));
    }
    let mut cost = Array2::from_elem((n, m), (f64::INFINITY, 0usize));
    for i in 0..n {
        for j in 0..m {
            let d = frame_distance(a, i, b, j);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = Vec::with_capacity(3);
                if i > 0 && j > 0 {
                    cands.push(cost[[i - 1, j - 1]]);
                }
                if i > 0 {
                    cands.push(cost[[i - 1, j]]);
                }
                if j > 0 {
                    cands.push(cost[[i, j - 1]]);
                }
                // ties prefer the shorter path so the result is symmetric
                cands.into_iter().fold((f64::INFINITY, usize::MAX), |acc, c| {
                    if c.0 < acc.0 || (c.0 == acc.0 && c.1 < acc.1) {
                        c
                    } else {
                        acc
                    }
                })
            };
            cost[[i, j]] = (best.0 + d, best.1 + 1);
        }
    }
    Ok(cost[[n - 1, m - 1]])
}

/// Mean per-frame Euclidean distance; sequences of different length are
/// aligned with [`dtw`] first and averaged over the path.
pub fn mel_distortion(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() == b.dim() {
        return generation_loss_value(a, b);
    }
    let (total, len) = dtw(a, b)?;
    Ok(total / len as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn edit_distance_hand_values() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
        assert_eq!(phoneme_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(phoneme_error_rate(&[], &[1, 2]).unwrap(), 1.0);
        assert_eq!(phoneme_error_rate(&[1, 4, 3, 5], &[1, 2, 3]).unwrap(), 2.0 / 3.0);
        assert!(phoneme_error_rate(&[1], &[]).is_err());
    }

    #[test]
    fn equal_length_distortion_is_frame_mean() {
        let a = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = Array2::from_shape_vec((2, 2), vec![3.0, 4.0, 1.0, 1.0]).unwrap();
        assert_eq!(mel_distortion(&a, &b).unwrap(), 2.5);
        assert_eq!(mel_distortion(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_in_one_bin() {
        let a = Array2::from_shape_fn((6, 4), |(i, j)| (i * j) as f64 * 0.1);
        let mut b = a.clone();
        b.column_mut(2).mapv_inplace(|v| v - 0.75);
        assert!((mel_distortion(&a, &b).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dtw_absorbs_repeated_frames() {
        let a = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
        let b = Array2::from_shape_vec((5, 1), vec![0.0, 0.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(mel_distortion(&a, &b).unwrap(), 0.0);
        let c = Array2::from_shape_vec((2, 2), vec![0.0; 4]).unwrap();
        assert!(matches!(mel_distortion(&a, &c), Err(DsrError::Shape(_))));
    }

    proptest! {
        #[test]
        fn per_bounds(h in proptest::collection::vec(0usize..5, 0..12), r in proptest::collection::vec(0usize..5, 1..12)) {
            let p = phoneme_error_rate(&h, &r).unwrap();
            prop_assert!(p >= 0.0);
            prop_assert!(p <= h.len().max(r.len()) as f64 / r.len() as f64);
            prop_assert_eq!(phoneme_error_rate(&r, &r).unwrap(), 0.0);
        }

        #[test]
        fn distortion_is_symmetric_and_zero_on_self(
            a in proptest::collection::vec(-3.0f64..3.0, 2..24),
            b in proptest::collection::vec(-3.0f64..3.0, 2..24),
        ) {
            let a = Array2::from_shape_vec((a.len() / 2, 2), a[..a.len() / 2 * 2].to_vec()).unwrap();
            let b = Array2::from_shape_vec((b.len() / 2, 2), b[..b.len() / 2 * 2].to_vec()).unwrap();
            let ab = mel_distortion(&a, &b).unwrap();
            let ba = mel_distortion(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-9, "{} vs {}", ab, ba);
            prop_assert_eq!(mel_distortion(&a, &a).unwrap(), 0.0);
        }
    }
}
