use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{DsrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adadelta,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adadelta => "adadelta",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adadelta" => Ok(OptimizerKind::Adadelta),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(DsrError::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

pub const ADADELTA_RHO: f64 = 0.95;
pub const ADADELTA_EPS: f64 = 1e-6;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adadelta or Adam over one [`ModelParams`].
///
/// Both moment buffers are kept per parameter tensor: Adadelta stores the
/// running squared gradient and squared update, Adam the first and second
/// moments. The buffers and step count are part of the checkpointed state.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|(_, t)| Array2::zeros(t.dim())).collect();
        Self { kind, lr, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn from_state(
        kind: OptimizerKind,
        lr: f64,
        step: u64,
        first: Vec<Array2<f64>>,
        second: Vec<Array2<f64>>,
    ) -> Self {
        Self { kind, lr, step, first, second }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn buffers(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.first, &self.second)
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), params.len(), "optimizer: one gradient per tensor");
        self.step += 1;
        match self.kind {
            OptimizerKind::Adadelta => {
                let lr = self.lr;
                for (((p, g), acc_g), acc_d) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    Zip::from(p).and(g).and(acc_g).and(acc_d).for_each(|p, &g, eg, ed| {
                        *eg = ADADELTA_RHO * *eg + (1.0 - ADADELTA_RHO) * g * g;
                        let delta = ((*ed + ADADELTA_EPS).sqrt() / (*eg + ADADELTA_EPS).sqrt()) * g;
                        *ed = ADADELTA_RHO * *ed + (1.0 - ADADELTA_RHO) * delta * delta;
                        *p -= lr * delta;
                    });
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                let lr = self.lr;
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    });
                }
            }
        }
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ModuleTag;
    use ndarray::array;

    fn single(v: f64) -> ModelParams {
        let mut p = ModelParams::new(ModuleTag::Generator, "t");
        p.insert("x", array![[v]]);
        p
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &p);
        opt.step(&mut p, &[array![[2.0]]]);
        // bias-corrected first step is lr * sign(g)
        assert!((p.get("x")[[0, 0]] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn adadelta_minimises_quadratic() {
        let mut p = single(3.0);
        let mut opt = Optimizer::new(OptimizerKind::Adadelta, 1.0, &p);
        for _ in 0..5000 {
            let x = p.get("x")[[0, 0]];
            opt.step(&mut p, &[array![[2.0 * x]]]);
        }
        assert!(p.get("x")[[0, 0]].abs() < 0.5);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![array![[3.0, 4.0]]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][[0, 0]] - 0.6).abs() < 1e-12);
    }
}
