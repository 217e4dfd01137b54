//! Convolutional system discriminator over fixed-length mel crops.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{DsrError, Result};
use crate::nn::layers::{conv2d, Map2d};
use crate::nn::{Bound, Graph, Init, ModelParams, ModuleTag, Var};

/// Output probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;
const KERNEL: usize = 4;
const HEAD_KERNEL: usize = 3;
const LEAK: f64 = 0.01;

/// Source rows of a `crop`-frame window starting at `offset` in a
/// `frames`-long sequence; shorter sequences repeat from the start.
pub fn crop_index(frames: usize, crop: usize, offset: usize) -> Vec<Option<usize>> {
    (0..crop).map(|i| Some((offset + i) % frames)).collect()
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: ModelConfig,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self { cfg: cfg.clone() }
    }

    pub fn crop_len(&self) -> usize {
        self.cfg.disc_crop
    }

    /// Largest valid crop offset for a sequence of `frames` frames.
    pub fn max_offset(&self, frames: usize) -> usize {
        frames.saturating_sub(self.cfg.disc_crop)
    }

    pub fn init(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let mut p = ModelParams::new(ModuleTag::Discriminator, "1");
        let mut c_in = 1;
        for (l, &c) in self.cfg.disc_channels.iter().enumerate() {
            p.insert(format!("conv{l}.w"), init.glorot(KERNEL * KERNEL * c_in, c));
            p.insert(format!("conv{l}.b"), init.zeros(1, c));
            c_in = c;
        }
        p.insert("head.w", init.glorot(HEAD_KERNEL * HEAD_KERNEL * c_in, 1));
        p.insert("head.b", init.zeros(1, 1));
        p
    }

    /// Probability `1 × 1` that a `crop × n_mels` window came from the
    /// baseline system.
    pub fn forward(&self, g: &mut Graph, b: &Bound, crop: Var) -> Var {
        let (h, w) = g.shape(crop);
        let mut x = g.reshape(crop, h * w, 1);
        let mut map = Map2d { height: h, width: w };
        for l in 0..self.cfg.disc_channels.len() {
            let (y, m) = conv2d(g, x, map, b.get(&format!("conv{l}.w")), b.get(&format!("conv{l}.b")), KERNEL, 2, 1);
            x = g.leaky_relu(y, LEAK);
            map = m;
        }
        let (logits, _) = conv2d(g, x, map, b.get("head.w"), b.get("head.b"), HEAD_KERNEL, 1, 1);
        let logit = g.mean(logits);
        let p = g.sigmoid(logit);
        g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    }

    /// Crops `mel` in-graph at `offset` and scores it.
    pub fn score_var(&self, g: &mut Graph, b: &Bound, mel: Var, offset: usize) -> Var {
        let (frames, _) = g.shape(mel);
        let crop = g.gather(mel, 1, crop_index(frames, self.cfg.disc_crop, offset));
        self.forward(g, b, crop)
    }

    /// Probability for an already-cropped window.
    pub fn probability(&self, params: &ModelParams, crop: &Array2<f64>) -> Result<f64> {
        if crop.nrows() != self.cfg.disc_crop || crop.ncols() != self.cfg.out_mels {
            return Err(DsrError::Shape(format!(
                "discriminator expects a {}×{} crop, got {}×{}",
                self.cfg.disc_crop,
                self.cfg.out_mels,
                crop.nrows(),
                crop.ncols()
            )));
        }
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let x = g.constant(crop.clone());
        let p = self.forward(&mut g, &b, x);
        Ok(g.scalar_value(p))
    }

    /// Probability of a full mel-spectrogram using the crop at `offset`.
    pub fn score(&self, params: &ModelParams, mel: &Array2<f64>, offset: usize) -> Result<f64> {
        if mel.nrows() == 0 {
            return Err(DsrError::Empty("discriminator input has zero frames".into()));
        }
        let idx = crop_index(mel.nrows(), self.cfg.disc_crop, offset);
        let crop = Array2::from_shape_fn((self.cfg.disc_crop, mel.ncols()), |(i, j)| mel[[idx[i].unwrap(), j]]);
        self.probability(params, &crop)
    }
}
