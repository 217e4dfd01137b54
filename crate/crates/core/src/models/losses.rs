//! Reconstruction, discrimination and multi-task losses.

use ndarray::Array2;

use crate::error::{DsrError, Result};
use crate::nn::{Graph, Var};

/// Mean over frames of the per-frame Euclidean distance between `z` and `m`.
/// Serves as both the generation and the adaptation loss.
pub fn generation_loss(g: &mut Graph, z: Var, m: Var) -> Var {
    assert_eq!(g.shape(z), g.shape(m), "generation loss: shape mismatch");
    let d = g.sub(z, m);
    let n = g.row_norm(d);
    g.mean(n)
}

pub fn generation_loss_value(z: &Array2<f64>, m: &Array2<f64>) -> Result<f64> {
    if z.dim() != m.dim() {
        return Err(DsrError::Shape(format!("generation loss: {:?} vs {:?}", z.dim(), m.dim())));
    }
    if z.nrows() == 0 {
        return Err(DsrError::Empty("generation loss on zero frames".into()));
    }
    let total: f64 = z
        .rows()
        .into_iter()
        .zip(m.rows())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .sum();
    Ok(total / z.nrows() as f64)
}

/// `mean(log(1 − f_d(z̃_sv)) + log f_d(z̃_asa))` over a batch of `B × 1`
/// probabilities.
pub fn discrimination_loss(g: &mut Graph, p_sv: Var, p_asa: Var) -> Var {
    let one_minus = g.neg(p_sv);
    let one_minus = g.shift(one_minus, 1.0);
    let a = g.log(one_minus);
    let b = g.log(p_asa);
    let s = g.add(a, b);
    g.mean(s)
}

pub fn discrimination_loss_value(p_sv: f64, p_asa: f64) -> f64 {
    (1.0 - p_sv).ln() + p_asa.ln()
}

/// `L_adapt − λ·L_dis`.
pub fn mtl_loss(adapt: f64, dis: f64, lambda: f64) -> f64 {
    adapt - lambda * dis
}

pub fn mtl_loss_var(g: &mut Graph, adapt: Var, dis: Var, lambda: f64) -> Var {
    let d = g.scale(dis, -lambda);
    g.add(adapt, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_values() {
        assert!((discrimination_loss_value(0.9, 0.1) + 4.605170185988091).abs() < 1e-9);
        assert!((discrimination_loss_value(0.5, 0.5) + 1.3862943611198906).abs() < 1e-9);
        assert!((mtl_loss(2.0, -1.38629, 1.0) - 3.38629).abs() < 1e-12);
        assert_eq!(mtl_loss(2.0, -1.38629, 0.0), 2.0);
        let mut z = Array2::zeros((1, 80));
        z[[0, 0]] = 3.0;
        z[[0, 1]] = 4.0;
        assert!((generation_loss_value(&z, &Array2::zeros((1, 80))).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(generation_loss_value(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn graph_and_value_forms_agree() {
        let z = array![[1.0, 2.0], [0.5, -1.0], [3.0, 3.0]];
        let m = array![[0.0, 2.0], [1.5, 1.0], [3.0, 3.0]];
        let mut g = Graph::new();
        let (zv, mv) = (g.constant(z.clone()), g.constant(m.clone()));
        let l = generation_loss(&mut g, zv, mv);
        assert!((g.scalar_value(l) - generation_loss_value(&z, &m).unwrap()).abs() < 1e-12);

        let ps = g.constant(array![[0.9], [0.5]]);
        let pa = g.constant(array![[0.1], [0.5]]);
        let d = discrimination_loss(&mut g, ps, pa);
        let want = (discrimination_loss_value(0.9, 0.1) + discrimination_loss_value(0.5, 0.5)) / 2.0;
        assert!((g.scalar_value(d) - want).abs() < 1e-12);
        let a = g.scalar(2.0);
        let dl = g.scalar(-1.38629);
        let t = mtl_loss_var(&mut g, a, dl, 1.0);
        assert!((g.scalar_value(t) - 3.38629).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(generation_loss_value(&Array2::zeros((2, 3)), &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn frame_permutation_invariance() {
        let z = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let m = array![[0.0, 2.0], [1.5, 1.0], [3.0, 3.0]];
        let zp = array![[3.0, 0.0], [1.0, 2.0], [0.5, -1.0]];
        let mp = array![[3.0, 3.0], [0.0, 2.0], [1.5, 1.0]];
        let a = generation_loss_value(&z, &m).unwrap();
        let b = generation_loss_value(&zp, &mp).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
