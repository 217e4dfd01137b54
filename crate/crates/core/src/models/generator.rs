//! Mel-spectrogram generator conditioned on phoneme posteriors, log-F0 and a
//! speaker embedding.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::speaker::SpeakerEmbedding;
use super::ModelConfig;
use crate::error::{DsrError, Result};
use crate::nn::layers::{broadcast_row, conv1d, linear, repeat_rows};
use crate::nn::{Bound, Graph, Init, ModelParams, ModuleTag, Var};

/// Log-F0 is fed to the generator as `(log_f0 − CENTER) / SCALE`.
pub const LOG_F0_CENTER: f64 = 5.0106352940962555; // ln 150
pub const LOG_F0_SCALE: f64 = 0.5;

/// Phoneme posteriors repeated to frame rate, `T × |P|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedEmbedding {
    pub rows: Array2<f64>,
}

impl ExpandedEmbedding {
    pub fn frames(&self) -> usize {
        self.rows.nrows()
    }
}

/// Repeats row `i` of `rows` `durations[i]` times.
pub fn expand_by_duration(rows: &Array2<f64>, durations: &[usize]) -> Result<ExpandedEmbedding> {
    if rows.nrows() != durations.len() {
        return Err(DsrError::Shape(format!("{} durations for {} phonemes", durations.len(), rows.nrows())));
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(DsrError::Empty("durations sum to zero".into()));
    }
    let mut out = Array2::zeros((total, rows.ncols()));
    let mut t = 0;
    for (i, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            out.row_mut(t).assign(&rows.row(i));
            t += 1;
        }
    }
    Ok(ExpandedEmbedding { rows: out })
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: ModelConfig,
}

impl Generator {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self { cfg: cfg.clone() }
    }

    pub fn init(&self, seed: u64) -> ModelParams {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let mut p = ModelParams::new(ModuleTag::Generator, "1");
        let input = c.n_phonemes + 1 + c.embed_dim;
        p.insert("in.w", init.glorot(input, c.gen_channels));
        p.insert("in.b", init.zeros(1, c.gen_channels));
        for l in 0..c.gen_layers {
            let w = init.glorot(c.gen_kernel * c.gen_channels, c.gen_channels).mapv(|v| v * 0.5);
            p.insert(format!("res{l}.w"), w);
            p.insert(format!("res{l}.b"), init.zeros(1, c.gen_channels));
        }
        p.insert("out.w", init.glorot(c.gen_channels, c.out_mels));
        p.insert("out.b", init.zeros(1, c.out_mels));
        p
    }

    /// `expanded: T × |P|`, `log_f0: T × 1` (raw log-Hz), `embedding: 1 × D`.
    /// Returns `T × 80`.
    pub fn forward(&self, g: &mut Graph, b: &Bound, expanded: Var, log_f0: Var, embedding: Var) -> Var {
        let (frames, _) = g.shape(expanded);
        let v = g.shift(log_f0, -LOG_F0_CENTER);
        let v = g.scale(v, 1.0 / LOG_F0_SCALE);
        let e = broadcast_row(g, embedding, frames);
        let x = g.concat_cols(&[expanded, v, e]);
        let mut h = linear(g, x, b.get("in.w"), b.get("in.b"));
        let k = self.cfg.gen_kernel;
        for l in 0..self.cfg.gen_layers {
            let a = g.relu(h);
            let r = conv1d(g, a, b.get(&format!("res{l}.w")), b.get(&format!("res{l}.b")), k, 1, k / 2);
            h = g.add(h, r);
        }
        let h = g.relu(h);
        linear(g, h, b.get("out.w"), b.get("out.b"))
    }

    pub fn check_inputs(&self, expanded: &ExpandedEmbedding, log_f0: &[f64], embedding: &SpeakerEmbedding) -> Result<()> {
        if expanded.frames() == 0 {
            return Err(DsrError::Empty("generator input has zero frames".into()));
        }
        if expanded.rows.ncols() != self.cfg.n_phonemes {
            return Err(DsrError::Shape(format!("generator expects {} phoneme columns", self.cfg.n_phonemes)));
        }
        if log_f0.len() != expanded.frames() {
            return Err(DsrError::Shape(format!(
                "{} log-F0 frames for {} embedding frames",
                log_f0.len(),
                expanded.frames()
            )));
        }
        if embedding.dim() != self.cfg.embed_dim {
            return Err(DsrError::Shape(format!("speaker embedding has {} dims", embedding.dim())));
        }
        Ok(())
    }

    /// Places the three inputs on `g` as constants.
    pub fn input_vars(
        &self,
        g: &mut Graph,
        expanded: &ExpandedEmbedding,
        log_f0: &[f64],
        embedding: &SpeakerEmbedding,
    ) -> Result<(Var, Var, Var)> {
        self.check_inputs(expanded, log_f0, embedding)?;
        let x = g.constant(expanded.rows.clone());
        let f = g.constant(Array2::from_shape_vec((log_f0.len(), 1), log_f0.to_vec()).expect("column"));
        let e = g.constant(embedding.as_row());
        Ok((x, f, e))
    }

    pub fn generate(
        &self,
        params: &ModelParams,
        expanded: &ExpandedEmbedding,
        log_f0: &[f64],
        embedding: &SpeakerEmbedding,
    ) -> Result<Array2<f64>> {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let (x, f, e) = self.input_vars(&mut g, expanded, log_f0, embedding)?;
        let y = self.forward(&mut g, &b, x, f, e);
        Ok(g.value(y).clone())
    }
}

/// Graph-side duration expansion, for when the posteriors need gradients.
pub fn expand_var(g: &mut Graph, rows: Var, durations: &[usize]) -> Var {
    repeat_rows(g, rows, durations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::losses::generation_loss;
    use crate::nn::gradcheck::check_params;
    use ndarray::array;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn expansion_length_is_duration_sum(durs in proptest::collection::vec(0usize..6, 1..8)) {
            let rows = Array2::from_shape_fn((durs.len(), 3), |(i, j)| (i * 3 + j) as f64);
            match expand_by_duration(&rows, &durs) {
                Ok(x) => {
                    prop_assert_eq!(x.frames(), durs.iter().sum::<usize>());
                    let mut t = 0;
                    for (i, &d) in durs.iter().enumerate() {
                        for _ in 0..d {
                            prop_assert_eq!(x.rows.row(t), rows.row(i));
                            t += 1;
                        }
                    }
                }
                Err(_) => prop_assert_eq!(durs.iter().sum::<usize>(), 0),
            }
        }
    }

    #[test]
    fn expansion_rejects_mismatch() {
        assert!(expand_by_duration(&array![[1.0], [2.0]], &[1]).is_err());
    }

    #[test]
    fn graph_expansion_agrees() {
        let rows = array![[1.0, 0.0], [0.0, 1.0]];
        let mut g = Graph::new();
        let r = g.constant(rows.clone());
        let y = expand_var(&mut g, r, &[2, 3]);
        assert_eq!(g.value(y), &expand_by_duration(&rows, &[2, 3]).unwrap().rows);
    }

    #[test]
    fn output_shape_and_input_checks() {
        let cfg = ModelConfig::tiny();
        let gen = Generator::new(&cfg);
        let p = gen.init(2);
        let x = ExpandedEmbedding { rows: Array2::from_elem((7, cfg.n_phonemes), 0.2) };
        let e = SpeakerEmbedding { vector: vec![0.5; cfg.embed_dim] };
        let y = gen.generate(&p, &x, &[5.0; 7], &e).unwrap();
        assert_eq!(y.dim(), (7, 80));
        assert!(gen.generate(&p, &x, &[5.0; 6], &e).is_err());
        assert!(gen.generate(&p, &x, &[5.0; 7], &SpeakerEmbedding { vector: vec![1.0] }).is_err());
    }

    #[test]
    fn every_input_block_receives_gradient() {
        let cfg = ModelConfig::tiny();
        let gen = Generator::new(&cfg);
        let p = gen.init(8);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.leaf(Array2::from_shape_fn((5, cfg.n_phonemes), |(t, j)| ((t + j) % 3) as f64 / 3.0));
        let f = g.leaf(Array2::from_shape_fn((5, 1), |(t, _)| 4.9 + 0.1 * t as f64));
        let e = g.leaf(Array2::from_shape_fn((1, cfg.embed_dim), |(_, j)| (j as f64 - 4.0) / 10.0));
        let y = gen.forward(&mut g, &b, x, f, e);
        let t = g.constant(Array2::zeros((5, 80)));
        let l = generation_loss(&mut g, y, t);
        let grads = g.backward(l);
        for v in [x, f, e] {
            let gv = grads.get(v).unwrap();
            assert!(gv.iter().any(|&d| d != 0.0));
            let numeric = crate::nn::gradcheck::numeric_grad(g.value(v), 1e-6, |probe| {
                let mut h = Graph::new();
                let b = p.bind(&mut h, false);
                let mut ins = [g.value(x).clone(), g.value(f).clone(), g.value(e).clone()];
                let slot = [x, f, e].iter().position(|&u| u == v).unwrap();
                ins[slot] = probe.clone();
                let [xi, fi, ei] = ins.map(|a| h.constant(a));
                let y = gen.forward(&mut h, &b, xi, fi, ei);
                let t = h.constant(Array2::zeros((5, 80)));
                let l = generation_loss(&mut h, y, t);
                h.scalar_value(l)
            });
            assert!(crate::nn::gradcheck::rel_error(gv, &numeric) < 1e-5);
        }
    }

    #[test]
    fn embedding_changes_output() {
        let cfg = ModelConfig::tiny();
        let gen = Generator::new(&cfg);
        let p = gen.init(2);
        let x = ExpandedEmbedding { rows: Array2::from_elem((4, cfg.n_phonemes), 0.2) };
        let a = gen.generate(&p, &x, &[5.0; 4], &SpeakerEmbedding { vector: vec![0.5; cfg.embed_dim] }).unwrap();
        let mut v = vec![0.5; cfg.embed_dim];
        v[0] = -0.5;
        let b = gen.generate(&p, &x, &[5.0; 4], &SpeakerEmbedding { vector: v }).unwrap();
        assert!((&a - &b).iter().any(|d| d.abs() > 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let cfg = ModelConfig::tiny();
        let gen = Generator::new(&cfg);
        let p = gen.init(3);
        let x = ExpandedEmbedding {
            rows: Array2::from_shape_fn((6, cfg.n_phonemes), |(t, j)| if t % cfg.n_phonemes == j { 0.9 } else { 0.025 }),
        };
        let f0: Vec<f64> = (0..6).map(|t| 4.8 + 0.05 * t as f64).collect();
        let e = SpeakerEmbedding { vector: (0..cfg.embed_dim).map(|i| (i as f64 - 3.0) / 8.0).collect() };
        let target = Array2::from_shape_fn((6, 80), |(t, j)| ((t * 13 + j * 7) % 17) as f64 / 17.0 - 0.5);
        let loss = |q: &ModelParams, g: &mut Graph, trainable: bool| {
            let b = q.bind(g, trainable);
            let (xv, fv, ev) = gen.input_vars(g, &x, &f0, &e).unwrap();
            let y = gen.forward(g, &b, xv, fv, ev);
            let t = g.constant(target.clone());
            (b, generation_loss(g, y, t))
        };
        let mut g = Graph::new();
        let (b, l) = loss(&p, &mut g, true);
        let analytic = b.grads(&g.backward(l));
        let r = check_params(&p, &analytic, 1e-6, 30, |q| {
            let mut g = Graph::new();
            let (_, l) = loss(q, &mut g, false);
            g.scalar_value(l)
        });
        assert!(r.max_rel_error() < 1e-5, "{:?}", r.worst());
    }
}
