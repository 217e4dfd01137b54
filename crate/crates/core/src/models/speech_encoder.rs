//! Attention-based sequence-to-sequence phoneme recogniser.
//!
//! Two stride-2 convolutions shorten the 120-dim input four-fold, a
//! two-layer bidirectional LSTM encodes it, and a single-layer LSTM decoder
//! with location-aware attention emits one phoneme distribution per step.
//! Decoding ends when the end-of-sequence symbol wins.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{DsrError, Result};
use crate::nn::layers::{conv1d, linear, reverse_time, unfold_index};
use crate::nn::{Bound, Graph, Init, ModelParams, ModuleTag, Var};

pub const DOWNSAMPLE: usize = 4;
const CONV_KERNEL: usize = 3;
const ENC_LAYERS: usize = 2;

/// One probability distribution over the phoneme inventory per decoded
/// phoneme, `N × |P|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeEmbeddingSeq {
    pub rows: Array2<f64>,
}

impl PhonemeEmbeddingSeq {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    /// Most probable symbol of every row.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0))
            .collect()
    }

    /// Rows are non-negative and sum to one within `tol`.
    pub fn is_simplex(&self, tol: f64) -> bool {
        self.rows.rows().into_iter().all(|r| r.iter().all(|&v| v >= 0.0) && (r.sum() - 1.0).abs() <= tol)
    }
}

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    cfg: ModelConfig,
}

struct DecoderState {
    h: Var,
    c: Var,
    align: Var,
}

impl SpeechEncoder {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self { cfg: cfg.clone() }
    }

    pub fn max_decode_len(frames: usize) -> usize {
        (3 * frames / DOWNSAMPLE).max(1)
    }

    pub fn init(&self, seed: u64) -> ModelParams {
        let c = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let mut p = ModelParams::new(ModuleTag::SpeechEncoder, "1");
        let ch = c.enc_conv_channels;
        p.insert("conv1.w", init.glorot(CONV_KERNEL * c.feature_dim, ch));
        p.insert("conv1.b", init.zeros(1, ch));
        p.insert("conv2.w", init.glorot(CONV_KERNEL * ch, ch));
        p.insert("conv2.b", init.zeros(1, ch));
        let h = c.enc_hidden;
        for layer in 0..ENC_LAYERS {
            let input = if layer == 0 { ch } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                insert_lstm(&mut p, &mut init, &format!("blstm{layer}.{dir}"), input, h);
            }
        }
        let mem = 2 * h;
        let (a, hd) = (c.enc_att_dim, c.enc_dec_hidden);
        p.insert("att.w_key", init.glorot(mem, a));
        p.insert("att.w_query", init.glorot(hd, a));
        p.insert("att.w_loc", init.glorot(c.enc_loc_kernel, a));
        p.insert("att.b", init.zeros(1, a));
        p.insert("att.v", init.glorot(a, 1));
        p.insert("dec.emb", init.glorot(c.n_phonemes, c.enc_emb_dim));
        insert_lstm(&mut p, &mut init, "dec", c.enc_emb_dim + mem, hd);
        p.insert("out.w", init.glorot(hd + mem, c.n_phonemes));
        p.insert("out.b", init.zeros(1, c.n_phonemes));
        p
    }

    /// Encoder memory `T/4 × 2H` for a `T × 120` feature matrix.
    pub fn encode(&self, g: &mut Graph, b: &Bound, feat: Var) -> Var {
        let x = conv1d(g, feat, b.get("conv1.w"), b.get("conv1.b"), CONV_KERNEL, 2, 1);
        let x = g.relu(x);
        let x = conv1d(g, x, b.get("conv2.w"), b.get("conv2.b"), CONV_KERNEL, 2, 1);
        let mut x = g.relu(x);
        for layer in 0..ENC_LAYERS {
            let fwd = lstm_layer(g, b, &format!("blstm{layer}.fwd"), x);
            let rev = reverse_time(g, x, 1);
            let bwd = lstm_layer(g, b, &format!("blstm{layer}.bwd"), rev);
            let bwd = reverse_time(g, bwd, 1);
            x = g.concat_cols(&[fwd, bwd]);
        }
        x
    }

    fn initial_state(&self, g: &mut Graph, steps: usize) -> DecoderState {
        let hd = self.cfg.enc_dec_hidden;
        DecoderState {
            h: g.constant(Array2::zeros((1, hd))),
            c: g.constant(Array2::zeros((1, hd))),
            align: g.constant(Array2::zeros((steps, 1))),
        }
    }

    /// One decoder step: returns `1 × |P|` logits.
    fn step(&self, g: &mut Graph, b: &Bound, mem: Var, keys: Var, state: &mut DecoderState, prev: usize) -> Var {
        let (steps, _) = g.shape(mem);
        let emb = g.slice_rows(b.get("dec.emb"), prev, 1);

        // location-aware attention over the previous alignment
        let k = self.cfg.enc_loc_kernel;
        let loc = g.gather(state.align, k, unfold_index(steps, k, 1, k / 2));
        let loc = g.matmul(loc, b.get("att.w_loc"));
        let query = g.matmul(state.h, b.get("att.w_query"));
        let query = g.add(query, b.get("att.b"));
        let e = g.add(keys, loc);
        let e = g.add_row(e, query);
        let e = g.tanh(e);
        let energies = g.matmul(e, b.get("att.v"));
        let energies = g.transpose(energies);
        let align = g.softmax(energies);
        let context = g.matmul(align, mem);

        let input = g.concat_cols(&[emb, context]);
        let (h, c) = lstm_cell(g, b, "dec", input, state.h, state.c);
        state.h = h;
        state.c = c;
        state.align = g.transpose(align);

        let out_in = g.concat_cols(&[h, context]);
        linear(g, out_in, b.get("out.w"), b.get("out.b"))
    }

    fn check_input(&self, feat: &Array2<f64>) -> Result<()> {
        if feat.nrows() == 0 {
            return Err(DsrError::Empty("speech encoder input has zero frames".into()));
        }
        if feat.ncols() != self.cfg.feature_dim {
            return Err(DsrError::Shape(format!(
                "speech encoder expects {} feature columns, got {}",
                self.cfg.feature_dim,
                feat.ncols()
            )));
        }
        Ok(())
    }

    /// Teacher-forced logits, `(labels.len() + 1) × |P|`; the last row
    /// predicts end-of-sequence.
    pub fn forced_logits(&self, g: &mut Graph, b: &Bound, feat: &Array2<f64>, labels: &[usize]) -> Result<Var> {
        self.check_input(feat)?;
        let eos = self.cfg.n_phonemes - 1;
        let x = g.constant(feat.clone());
        let mem = self.encode(g, b, x);
        let keys = g.matmul(mem, b.get("att.w_key"));
        let steps = g.shape(mem).0;
        let mut state = self.initial_state(g, steps);
        let mut rows = Vec::with_capacity(labels.len() + 1);
        let mut prev = eos;
        for &target in labels.iter().chain(std::iter::once(&eos)) {
            rows.push(self.step(g, b, mem, keys, &mut state, prev));
            prev = target;
        }
        Ok(g.concat_rows(&rows))
    }

    /// Mean per-position cross-entropy of `labels` followed by end-of-sequence.
    pub fn loss(&self, g: &mut Graph, b: &Bound, feat: &Array2<f64>, labels: &[usize]) -> Result<Var> {
        let logits = self.forced_logits(g, b, feat, labels)?;
        let logp = g.log_softmax(logits);
        let mut targets = labels.to_vec();
        targets.push(self.cfg.n_phonemes - 1);
        let picked = g.pick(logp, targets);
        let m = g.mean(picked);
        Ok(g.neg(m))
    }

    /// Posteriors with the decoder history forced to `labels`: exactly one
    /// row per label.
    pub fn forced_posteriors(&self, params: &ModelParams, feat: &Array2<f64>, labels: &[usize]) -> Result<PhonemeEmbeddingSeq> {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let logits = self.forced_logits(&mut g, &b, feat, labels)?;
        let rows = g.slice_rows(logits, 0, labels.len());
        let probs = g.softmax(rows);
        Ok(PhonemeEmbeddingSeq { rows: g.value(probs).clone() })
    }

    /// Greedy decoding until end-of-sequence.
    pub fn decode(&self, params: &ModelParams, feat: &Array2<f64>) -> Result<PhonemeEmbeddingSeq> {
        self.check_input(feat)?;
        let eos = self.cfg.n_phonemes - 1;
        let max_len = Self::max_decode_len(feat.nrows());
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let x = g.constant(feat.clone());
        let mem = self.encode(&mut g, &b, x);
        let keys = g.matmul(mem, b.get("att.w_key"));
        let steps = g.shape(mem).0;
        let mut state = self.initial_state(&mut g, steps);
        let mut rows: Vec<Array2<f64>> = Vec::new();
        let mut prev = eos;
        loop {
            if rows.len() >= max_len {
                return Err(DsrError::DecodeRunaway { max_len });
            }
            let logits = self.step(&mut g, &b, mem, keys, &mut state, prev);
            let probs = g.softmax(logits);
            let row = g.value(probs).clone();
            let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(eos);
            if best == eos {
                break;
            }
            rows.push(row);
            prev = best;
        }
        let n = self.cfg.n_phonemes;
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(PhonemeEmbeddingSeq { rows: Array2::from_shape_vec((rows.len(), n), flat).expect("rows") })
    }
}

pub(crate) fn insert_lstm(p: &mut ModelParams, init: &mut Init<'_>, prefix: &str, input: usize, hidden: usize) {
    p.insert(format!("{prefix}.w_ih"), init.glorot(input, 4 * hidden));
    p.insert(format!("{prefix}.w_hh"), init.glorot(hidden, 4 * hidden));
    let mut bias = init.zeros(1, 4 * hidden);
    // forget gate starts open
    bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
    p.insert(format!("{prefix}.b"), bias);
}

pub(crate) fn lstm_layer(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Var {
    lstm_layer_batched(g, b, prefix, x, 1)
}

pub(crate) fn lstm_layer_batched(g: &mut Graph, b: &Bound, prefix: &str, x: Var, batch: usize) -> Var {
    g.lstm(
        x,
        b.get(&format!("{prefix}.w_ih")),
        b.get(&format!("{prefix}.w_hh")),
        b.get(&format!("{prefix}.b")),
        batch,
    )
}

fn lstm_cell(g: &mut Graph, b: &Bound, prefix: &str, x: Var, h: Var, c: Var) -> (Var, Var) {
    let hidden = g.shape(h).1;
    let xi = g.matmul(x, b.get(&format!("{prefix}.w_ih")));
    let hh = g.matmul(h, b.get(&format!("{prefix}.w_hh")));
    let pre = g.add(xi, hh);
    let pre = g.add(pre, b.get(&format!("{prefix}.b")));
    let i = g.slice_cols(pre, 0, hidden);
    let i = g.sigmoid(i);
    let f = g.slice_cols(pre, hidden, hidden);
    let f = g.sigmoid(f);
    let cand = g.slice_cols(pre, 2 * hidden, hidden);
    let cand = g.tanh(cand);
    let o = g.slice_cols(pre, 3 * hidden, hidden);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c);
    let write = g.mul(i, cand);
    let c_new = g.add(keep, write);
    let ct = g.tanh(c_new);
    let h_new = g.mul(o, ct);
    (h_new, c_new)
}
