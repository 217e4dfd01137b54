//! LSTM speaker encoder and the generalized end-to-end verification loss.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::speech_encoder::{insert_lstm, lstm_layer_batched};
use super::ModelConfig;
use crate::error::{DsrError, Result};
use crate::nn::layers::linear;
use crate::nn::{Bound, Graph, Init, ModelParams, ModuleTag, Var};

pub const GE2E_W_INIT: f64 = 10.0;
pub const GE2E_B_INIT: f64 = -5.0;
const GE2E_W_MIN: f64 = 1e-6;

/// Unit-norm speaker representation.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f64>,
}

impl SpeakerEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        let dot: f64 = self.vector.iter().zip(&other.vector).map(|(a, b)| a * b).sum();
        let na = self.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    pub fn as_row(&self) -> Array2<f64> {
        Array2::from_shape_vec((1, self.vector.len()), self.vector.clone()).expect("row")
    }
}

#[derive(Clone, Debug)]
pub struct SpeakerEncoder {
    cfg: ModelConfig,
}

impl SpeakerEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self { cfg: cfg.clone() }
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn init(&self, seed: u64) -> ModelParams {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let mut p = ModelParams::new(ModuleTag::SpeakerEncoder, "1");
        for layer in 0..c.spk_layers {
            let input = if layer == 0 { c.spk_mels } else { c.spk_hidden };
            insert_lstm(&mut p, &mut init, &format!("lstm{layer}"), input, c.spk_hidden);
        }
        p.insert("proj.w", init.glorot(c.spk_hidden, c.embed_dim));
        p.insert("proj.b", init.zeros(1, c.embed_dim));
        p.insert("ge2e.w", Array2::from_elem((1, 1), GE2E_W_INIT));
        p.insert("ge2e.b", Array2::from_elem((1, 1), GE2E_B_INIT));
        p
    }

    /// Embeds `batch` equal-length sequences stored time-major as
    /// `(T·batch) × 40`. Returns `batch × D` unit rows.
    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var, batch: usize) -> Var {
        let mut h = x;
        for layer in 0..self.cfg.spk_layers {
            h = lstm_layer_batched(g, b, &format!("lstm{layer}"), h, batch);
        }
        let (rows, _) = g.shape(h);
        let last = g.slice_rows(h, rows - batch, batch);
        let y = linear(g, last, b.get("proj.w"), b.get("proj.b"));
        g.l2_normalize_rows(y)
    }

    fn check(&self, mel: &Array2<f64>) -> Result<()> {
        if mel.nrows() == 0 {
            return Err(DsrError::Empty("speaker encoder input has zero frames".into()));
        }
        if mel.ncols() != self.cfg.spk_mels {
            return Err(DsrError::Shape(format!(
                "speaker encoder expects {} mel bands, got {}",
                self.cfg.spk_mels,
                mel.ncols()
            )));
        }
        Ok(())
    }

    /// `1 × D` embedding of one utterance inside an existing graph.
    pub fn embed_var(&self, g: &mut Graph, b: &Bound, mel: Var) -> Var {
        self.forward(g, b, mel, 1)
    }

    pub fn embed(&self, params: &ModelParams, mel: &Array2<f64>) -> Result<SpeakerEmbedding> {
        self.check(mel)?;
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let x = g.constant(mel.clone());
        let e = self.embed_var(&mut g, &b, x);
        Ok(SpeakerEmbedding { vector: g.value(e).iter().copied().collect() })
    }

    /// Time-major interleaving of equal-length crops.
    pub fn interleave(crops: &[Array2<f64>]) -> Result<Array2<f64>> {
        let first = crops.first().ok_or_else(|| DsrError::Empty("no crops".into()))?;
        let (t, d) = first.dim();
        if crops.iter().any(|c| c.dim() != (t, d)) {
            return Err(DsrError::Shape("crops differ in shape".into()));
        }
        let n = crops.len();
        Ok(Array2::from_shape_fn((t * n, d), |(r, j)| crops[r % n][[r / n, j]]))
    }

    /// GE2E loss of `speakers × per_speaker` crops, speaker-major order.
    pub fn ge2e_batch_loss(
        &self,
        g: &mut Graph,
        b: &Bound,
        crops: &[Array2<f64>],
        speakers: usize,
        per_speaker: usize,
    ) -> Result<Var> {
        if crops.len() != speakers * per_speaker {
            return Err(DsrError::Shape(format!("{} crops for {speakers}×{per_speaker}", crops.len())));
        }
        for c in crops {
            self.check(c)?;
        }
        let x = g.constant(Self::interleave(crops)?);
        let e = self.forward(g, b, x, crops.len());
        ge2e_loss(g, e, b.get("ge2e.w"), b.get("ge2e.b"), speakers, per_speaker)
    }

    /// Keeps the similarity scale positive.
    pub fn clamp_ge2e(params: &mut ModelParams) {
        if let Some(w) = params.try_get("ge2e.w") {
            let mut w = w.clone();
            w.mapv_inplace(|v| v.max(GE2E_W_MIN));
            params.insert("ge2e.w", w);
        }
    }
}

/// Generalized end-to-end softmax loss, summed over all utterances.
///
/// `e` holds `speakers·per_speaker` unit rows in speaker-major order. Each
/// utterance is compared against every speaker centroid, with its own
/// speaker's centroid computed without it.
pub fn ge2e_loss(g: &mut Graph, e: Var, w: Var, b: Var, speakers: usize, per_speaker: usize) -> Result<Var> {
    let (rows, _) = g.shape(e);
    if per_speaker < 2 || speakers < 2 || rows != speakers * per_speaker {
        return Err(DsrError::Shape(format!(
            "GE2E needs at least 2 speakers × 2 utterances matching {rows} rows"
        )));
    }
    let m = per_speaker;
    let spk = |k: usize| k / m;

    let avg = Array2::from_shape_fn((speakers, rows), |(j, k)| if spk(k) == j { 1.0 / m as f64 } else { 0.0 });
    let excl = Array2::from_shape_fn((rows, rows), |(k, l)| {
        if spk(k) == spk(l) && k != l {
            1.0 / (m - 1) as f64
        } else {
            0.0
        }
    });
    let own = Array2::from_shape_fn((rows, speakers), |(k, j)| if spk(k) == j { 1.0 } else { 0.0 });
    let other = own.mapv(|v| 1.0 - v);

    let avg = g.constant(avg);
    let centroids = g.matmul(avg, e);
    let centroids = g.l2_normalize_rows(centroids);
    let cos_all = g.matmul_t(e, centroids);

    let excl = g.constant(excl);
    let loo = g.matmul(excl, e);
    let loo = g.l2_normalize_rows(loo);
    let prod = g.mul(e, loo);
    let cos_own = g.sum_cols(prod);

    let other = g.constant(other);
    let own = g.constant(own);
    let cross = g.mul(cos_all, other);
    let self_part = g.mul_col(own, cos_own);
    let cos = g.add(cross, self_part);

    let s = g.scale_var(cos, w);
    let s = g.shift_var(s, b);
    let logp = g.log_softmax(s);
    let picked = g.pick(logp, (0..rows).map(spk).collect());
    let total = g.sum(picked);
    Ok(g.neg(total))
}

/// Plain-array GE2E loss, used as an independent reference.
pub fn ge2e_loss_value(e: &Array2<f64>, w: f64, b: f64, speakers: usize, per_speaker: usize) -> f64 {
    let m = per_speaker;
    let norm = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let row = |k: usize| e.row(k).to_vec();
    let mut loss = 0.0;
    for k in 0..speakers * m {
        let own = k / m;
        let mut scores = Vec::with_capacity(speakers);
        for j in 0..speakers {
            let members: Vec<usize> = (j * m..(j + 1) * m).filter(|&l| j != own || l != k).collect();
            let mut c = vec![0.0; e.ncols()];
            for &l in &members {
                for (ci, v) in c.iter_mut().zip(row(l)) {
                    *ci += v / members.len() as f64;
                }
            }
            scores.push(w * dot(&row(k), &norm(c)) + b);
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
        loss += lse - scores[own];
    }
    loss
}
