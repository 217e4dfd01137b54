//! Prosody predictors: phoneme durations and frame-level log-F0.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{DsrError, Result};
use crate::nn::layers::{conv1d, linear};
use crate::nn::{Bound, Graph, Init, ModelParams, ModuleTag, Var};

/// Two same-padded convolutions and a scalar linear head.
#[derive(Clone, Debug)]
struct ConvRegressor {
    tag: ModuleTag,
    input: usize,
    channels: usize,
    kernel: usize,
}

impl ConvRegressor {
    fn init(&self, seed: u64, target_mean: f64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let mut p = ModelParams::new(self.tag, "1");
        p.insert("conv1.w", init.glorot(self.kernel * self.input, self.channels));
        p.insert("conv1.b", init.zeros(1, self.channels));
        p.insert("conv2.w", init.glorot(self.kernel * self.channels, self.channels));
        p.insert("conv2.b", init.zeros(1, self.channels));
        p.insert("out.w", init.glorot(self.channels, 1));
        p.insert("out.b", Array2::from_elem((1, 1), target_mean));
        p
    }

    fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Var {
        let pad = self.kernel / 2;
        let h = conv1d(g, x, b.get("conv1.w"), b.get("conv1.b"), self.kernel, 1, pad);
        let h = g.relu(h);
        let h = conv1d(g, h, b.get("conv2.w"), b.get("conv2.b"), self.kernel, 1, pad);
        let h = g.relu(h);
        linear(g, h, b.get("out.w"), b.get("out.b"))
    }

    fn check(&self, x: &Array2<f64>, what: &str) -> Result<()> {
        if x.nrows() == 0 {
            return Err(DsrError::Empty(format!("{what} input is empty")));
        }
        if x.ncols() != self.input {
            return Err(DsrError::Shape(format!("{what} expects {} columns, got {}", self.input, x.ncols())));
        }
        Ok(())
    }

    fn mse(&self, g: &mut Graph, b: &Bound, x: &Array2<f64>, target: &[f64], what: &str) -> Result<Var> {
        self.check(x, what)?;
        if target.len() != x.nrows() {
            return Err(DsrError::Shape(format!("{what}: {} targets for {} rows", target.len(), x.nrows())));
        }
        let xv = g.constant(x.clone());
        let y = self.forward(g, b, xv);
        let t = g.constant(Array2::from_shape_vec((target.len(), 1), target.to_vec()).expect("column"));
        let d = g.sub(y, t);
        let sq = g.mul(d, d);
        Ok(g.mean(sq))
    }

    fn predict(&self, params: &ModelParams, x: &Array2<f64>, what: &str) -> Result<Vec<f64>> {
        self.check(x, what)?;
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &b, xv);
        Ok(g.value(y).iter().copied().collect())
    }
}

/// Predicts the log-duration (in frames) of every phoneme from its
/// posterior row.
#[derive(Clone, Debug)]
pub struct DurationPredictor {
    net: ConvRegressor,
}

impl DurationPredictor {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            net: ConvRegressor {
                tag: ModuleTag::DurationPredictor,
                input: cfg.n_phonemes,
                channels: cfg.pred_channels,
                kernel: cfg.dur_kernel,
            },
        }
    }

    /// `mean_log_duration` seeds the output bias.
    pub fn init(&self, seed: u64, mean_log_duration: f64) -> ModelParams {
        self.net.init(seed, mean_log_duration)
    }

    /// `N × 1` log-durations.
    pub fn forward(&self, g: &mut Graph, b: &Bound, pe: Var) -> Var {
        self.net.forward(g, b, pe)
    }

    /// Mean squared error against log-durations.
    pub fn loss(&self, g: &mut Graph, b: &Bound, pe: &Array2<f64>, durations: &[usize]) -> Result<Var> {
        let target: Vec<f64> = durations.iter().map(|&d| (d.max(1) as f64).ln()).collect();
        self.net.mse(g, b, pe, &target, "duration predictor")
    }

    /// Frame counts, rounded and at least one.
    pub fn predict(&self, params: &ModelParams, pe: &Array2<f64>) -> Result<Vec<usize>> {
        let logd = self.net.predict(params, pe, "duration predictor")?;
        Ok(logd.iter().map(|&l| l.clamp(-20.0, 20.0).exp().round().max(1.0) as usize).collect())
    }
}

/// Predicts frame-level log-F0 from duration-expanded phoneme posteriors.
#[derive(Clone, Debug)]
pub struct PitchPredictor {
    net: ConvRegressor,
}

impl PitchPredictor {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            net: ConvRegressor {
                tag: ModuleTag::PitchPredictor,
                input: cfg.n_phonemes,
                channels: cfg.pred_channels,
                kernel: cfg.pitch_kernel,
            },
        }
    }

    pub fn init(&self, seed: u64, mean_log_f0: f64) -> ModelParams {
        self.net.init(seed, mean_log_f0)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, expanded: Var) -> Var {
        self.net.forward(g, b, expanded)
    }

    /// Mean squared error against an interpolated log-F0 contour.
    pub fn loss(&self, g: &mut Graph, b: &Bound, expanded: &Array2<f64>, log_f0: &[f64]) -> Result<Var> {
        self.net.mse(g, b, expanded, log_f0, "pitch predictor")
    }

    pub fn predict(&self, params: &ModelParams, expanded: &Array2<f64>) -> Result<Vec<f64>> {
        self.net.predict(params, expanded, "pitch predictor")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_params;

    fn pe(n: usize, p: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, p), |(i, j)| if (i + j) % p == 0 { 0.8 } else { 0.2 / (p - 1) as f64 })
    }

    #[test]
    fn bias_starts_at_target_mean() {
        let cfg = ModelConfig::tiny();
        let dp = DurationPredictor::new(&cfg);
        let mut p = dp.init(1, 2.0f64.ln() + 1.0);
        // zero the head weights: output equals the bias exactly
        p.insert("out.w", Array2::zeros((cfg.pred_channels, 1)));
        let d = dp.predict(&p, &pe(4, cfg.n_phonemes)).unwrap();
        assert_eq!(d, vec![(2.0 * 1.0f64.exp()).round() as usize; 4]);
    }

    #[test]
    fn durations_are_at_least_one() {
        let cfg = ModelConfig::tiny();
        let dp = DurationPredictor::new(&cfg);
        let p = dp.init(1, -30.0);
        assert!(dp.predict(&p, &pe(5, cfg.n_phonemes)).unwrap().iter().all(|&d| d == 1));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let cfg = ModelConfig::tiny();
        let pp = PitchPredictor::new(&cfg);
        let p = pp.init(1, 5.0);
        assert!(matches!(pp.predict(&p, &Array2::zeros((3, 7))), Err(DsrError::Shape(_))));
        assert!(matches!(pp.predict(&p, &Array2::zeros((0, cfg.n_phonemes))), Err(DsrError::Empty(_))));
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = ModelConfig::tiny();
        let x = pe(6, cfg.n_phonemes);
        let dp = DurationPredictor::new(&cfg);
        let p = dp.init(5, 1.0);
        let durs = [3, 1, 7, 2, 4, 9];
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let l = dp.loss(&mut g, &b, &x, &durs).unwrap();
        let analytic = b.grads(&g.backward(l));
        let r = check_params(&p, &analytic, 1e-6, 40, |q| {
            let mut g = Graph::new();
            let b = q.bind(&mut g, false);
            let l = dp.loss(&mut g, &b, &x, &durs).unwrap();
            g.scalar_value(l)
        });
        assert!(r.max_rel_error() < 1e-5, "{:?}", r.worst());

        let pp = PitchPredictor::new(&cfg);
        let p = pp.init(6, 5.0);
        let f0: Vec<f64> = (0..6).map(|i| 5.0 + 0.1 * i as f64).collect();
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let l = pp.loss(&mut g, &b, &x, &f0).unwrap();
        let analytic = b.grads(&g.backward(l));
        let r = check_params(&p, &analytic, 1e-6, 40, |q| {
            let mut g = Graph::new();
            let b = q.bind(&mut g, false);
            let l = pp.loss(&mut g, &b, &x, &f0).unwrap();
            g.scalar_value(l)
        });
        assert!(r.max_rel_error() < 1e-5, "{:?}", r.worst());
    }
}
