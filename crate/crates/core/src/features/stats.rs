//! Per-dimension mean/variance normalisation and its on-disk format.
//!
//! File layout (UTF-8, one record per line):
//!
//! ```text
//! dsr-stats 1
//! dim 3
//! mean 0.5 -1.25 3
//! std 1 0.001 2.5
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact.

use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{DsrError, Result};

/// Standard deviations are floored here so constant dimensions stay finite.
pub const STD_FLOOR: f64 = 1e-3;
const STATS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Pooled statistics over every row of every matrix.
pub fn compute_stats<'a, I>(features: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut dim = None;
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    let mut mats = Vec::new();
    for m in features {
        match dim {
            None => {
                dim = Some(m.ncols());
                sum = vec![0.0; m.ncols()];
            }
            Some(d) if d != m.ncols() => {
                return Err(DsrError::Shape(format!("stats: expected {d} columns, got {}", m.ncols())));
            }
            _ => {}
        }
        for (s, col) in sum.iter_mut().zip(m.sum_axis(Axis(0))) {
            *s += col;
        }
        count += m.nrows();
        mats.push(m);
    }
    if count == 0 {
        return Err(DsrError::Empty("no frames to compute statistics over".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut var = vec![0.0; mean.len()];
    for m in mats {
        for row in m.rows() {
            for ((v, &x), &mu) in var.iter_mut().zip(row.iter()).zip(&mean) {
                *v += (x - mu) * (x - mu);
            }
        }
    }
    let std = var.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(DsrError::Shape(format!("stats have {} dims, input has {}", self.dim(), x.ncols())));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        format!(
            "dsr-stats {STATS_VERSION}\ndim {}\nmean {}\nstd {}\n",
            self.dim(),
            join(&self.mean),
            join(&self.std)
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |why: &str| DsrError::Config(format!("stats file: {why}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let version: u32 = header
            .strip_prefix("dsr-stats ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing header"))?;
        if version != STATS_VERSION {
            return Err(DsrError::VersionMismatch { found: version, expected: STATS_VERSION });
        }
        let dim: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("dim "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing dim"))?;
        let mut vector = |key: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            let rest = line.strip_prefix(key).ok_or_else(|| bad(&format!("expected {key}")))?;
            let v: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(bad(&format!("{key} has {} values, dim is {dim}", v.len())));
            }
            Ok(v)
        };
        let mean = vector("mean ")?;
        let std = vector("std ")?;
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(bad("std must be positive"));
        }
        Ok(Self { mean, std })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DsrError::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
