//! A fixed phoneme recogniser used to score reconstructions: nearest class
//! mean per frame under a pooled within-class covariance, then smoothing
//! and run collapsing.

use ndarray::{Array1, Array2, Axis};

use crate::error::{DsrError, Result};
use crate::training::PreparedUtterance;

/// Label-run filter settings.
const SMOOTH_WINDOW: usize = 5;
const MIN_RUN: usize = 3;

#[derive(Clone, Debug)]
pub struct PhonemeRecognizer {
    /// One row per class, in whitened coordinates; rows of unseen classes
    /// are never chosen.
    centroids: Array2<f64>,
    /// Maps mean-removed frames (rows) into the whitened space.
    whiten: Array2<f64>,
    seen: Vec<bool>,
    window: usize,
    min_run: usize,
}

fn mean_removed(mel: &Array2<f64>) -> Array2<f64> {
    let mu = mel.mean_axis(Axis(0)).expect("non-empty");
    mel - &mu
}

impl PhonemeRecognizer {
    /// Class means and pooled covariance of utterance-mean-removed 80-band
    /// frames.
    pub fn fit(utts: &[&PreparedUtterance], n_classes: usize) -> Result<Self> {
        let dim = utts.first().ok_or_else(|| DsrError::Empty("no recogniser training data".into()))?.mel80.ncols();
        let mut sums = Array2::<f64>::zeros((n_classes, dim));
        let mut counts = vec![0usize; n_classes];
        for u in utts {
            let x = mean_removed(&u.mel80);
            for (row, &lab) in x.rows().into_iter().zip(&u.alignment.frame_labels()) {
                let mut s = sums.row_mut(lab);
                s += &row;
                counts[lab] += 1;
            }
        }
        for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
            if c > 0 {
                row /= c as f64;
            }
        }
        let mut cov = Array2::<f64>::zeros((dim, dim));
        let mut total = 0usize;
        for u in utts {
            let mut x = mean_removed(&u.mel80);
            for (mut row, &lab) in x.rows_mut().into_iter().zip(&u.alignment.frame_labels()) {
                row -= &sums.row(lab);
            }
            cov += &x.t().dot(&x);
            total += x.nrows();
        }
        cov /= total.max(1) as f64;
        let whiten = inverse_sqrt(&cov);
        Ok(Self {
            centroids: sums.dot(&whiten),
            whiten,
            seen: counts.iter().map(|&c| c > 0).collect(),
            window: SMOOTH_WINDOW,
            min_run: MIN_RUN,
        })
    }

    /// Replaces the smoothing window and the shortest kept run.
    pub fn with_filter(mut self, window: usize, min_run: usize) -> Self {
        self.window = window.max(1);
        self.min_run = min_run.max(1);
        self
    }

    pub fn frame_labels(&self, mel80: &Array2<f64>) -> Result<Vec<usize>> {
        if mel80.nrows() == 0 {
            return Err(DsrError::Empty("nothing to recognise".into()));
        }
        if mel80.ncols() != self.centroids.ncols() {
            return Err(DsrError::Shape(format!("recogniser expects {} bands", self.centroids.ncols())));
        }
        let x = mean_removed(mel80).dot(&self.whiten);
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let mut best = (f64::INFINITY, 0);
                for (k, c) in self.centroids.rows().into_iter().enumerate() {
                    if !self.seen[k] {
                        continue;
                    }
                    let d: f64 = (&r - &c).mapv(|v| v * v).sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                best.1
            })
            .collect())
    }

    /// Phoneme sequence: majority-smoothed frame labels, short runs
    /// dropped, repeats merged.
    pub fn recognize(&self, mel80: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(collapse(&smooth(&self.frame_labels(mel80)?, self.window), self.min_run))
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn centroid(&self, k: usize) -> Array1<f64> {
        self.centroids.row(k).to_owned()
    }
}

/// Symmetric `C^{-1/2}` with a small ridge so that near-empty directions
/// stay bounded.
fn inverse_sqrt(cov: &Array2<f64>) -> Array2<f64> {
    let n = cov.nrows();
    let ridge = 1e-3 * (0..n).map(|i| cov[[i, i]]).sum::<f64>() / n.max(1) as f64 + 1e-12;
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| cov[[i, j]] + if i == j { ridge } else { 0.0 });
    let eig = nalgebra::SymmetricEigen::new(m);
    let scale = nalgebra::DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(ridge).sqrt()));
    let w = &eig.eigenvectors * scale * eig.eigenvectors.transpose();
    Array2::from_shape_fn((n, n), |(i, j)| w[(i, j)])
}

fn smooth(labels: &[usize], window: usize) -> Vec<usize> {
    let half = window / 2;
    (0..labels.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(labels.len());
            let win = &labels[lo..hi];
            let mut best = (0, labels[i]);
            for &c in win {
                let n = win.iter().filter(|&&x| x == c).count();
                if n > best.0 || (n == best.0 && c == labels[i]) {
                    best = (n, c);
                }
            }
            best.1
        })
        .collect()
}

fn collapse(labels: &[usize], min_run: usize) -> Vec<usize> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match runs.last_mut() {
            Some((c, n)) if *c == l => *n += 1,
            _ => runs.push((l, 1)),
        }
    }
    let mut out: Vec<usize> = Vec::new();
    for (c, n) in runs {
        if n >= min_run && out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}
