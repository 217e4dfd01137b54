//! Central-difference gradient checking.

use ndarray::Array2;

use super::params::ModelParams;

/// Comparison of analytic and numeric gradients for one parameter tensor.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// `‖a − n‖ / (‖a‖ + ‖n‖)` over the checked entries, 0 when both vanish.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub analytic_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Which entries of a tensor with `len` elements to probe: all of them up to
/// `limit`, otherwise an evenly strided subset.
fn probe_positions(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        let stride = len as f64 / limit as f64;
        (0..limit).map(|i| ((i as f64 + 0.5) * stride) as usize).collect()
    }
}

/// Compares `analytic` (one gradient per tensor of `params`) with central
/// differences of `loss` at step `h`, probing at most `limit` entries per
/// tensor.
pub fn check_params<F>(
    params: &ModelParams,
    analytic: &[Array2<f64>],
    h: f64,
    limit: usize,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&ModelParams) -> f64,
{
    assert_eq!(analytic.len(), params.len());
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for (ti, name) in names.iter().enumerate() {
        let cols = params.get(name).ncols();
        let positions = probe_positions(params.get(name).len(), limit);
        let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0, 0.0, 0.0, 0.0f64);
        for &p in &positions {
            let (r, c) = (p / cols, p % cols);
            let orig = work.get(name)[[r, c]];
            work.tensors_mut()[ti][[r, c]] = orig + h;
            let up = loss(&work);
            work.tensors_mut()[ti][[r, c]] = orig - h;
            let down = loss(&work);
            work.tensors_mut()[ti][[r, c]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][[r, c]];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            max_abs = max_abs.max((a - numeric).abs());
        }
        let denom = a2.sqrt() + n2.sqrt();
        let rel_error = if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 };
        report.tensors.push(TensorCheck {
            name: name.clone(),
            checked: positions.len(),
            rel_error,
            max_abs_error: max_abs,
            analytic_norm: a2.sqrt(),
        });
    }
    report
}

/// Central differences of a scalar function of one matrix.
pub fn numeric_grad<F>(x: &Array2<f64>, h: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut work = x.clone();
    let mut out = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = work[[r, c]];
        work[[r, c]] = orig + h;
        let up = f(&work);
        work[[r, c]] = orig - h;
        let down = f(&work);
        work[[r, c]] = orig;
        out[[r, c]] = (up - down) / (2.0 * h);
    }
    out
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, 0 when both vanish.
pub fn rel_error(a: &Array2<f64>, n: &Array2<f64>) -> f64 {
    let diff = (a - n).mapv(|v| v * v).sum().sqrt();
    let denom = a.mapv(|v| v * v).sum().sqrt() + n.mapv(|v| v * v).sum().sqrt();
    if denom > 0.0 {
        diff / denom
    } else {
        0.0
    }
}
