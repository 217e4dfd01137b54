//! Objective evaluation of reconstruction systems.

pub mod metrics;
pub mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{dtw, levenshtein, mel_distortion, phoneme_error_rate};
pub use oracle::PhonemeRecognizer;

use crate::corpus::{healthy_durations, synth::pitch_offset, Role, Split, ToyCorpusConfig};
use crate::error::{DsrError, Result};
use crate::features::inversion::mel80_to_mel40;
use crate::models::{Discriminator, ModelConfig, SpeakerEmbedding, SpeakerEncoder, SystemBundle};
use crate::nn::{ModelParams, ModuleTag};
use crate::phoneme::PhonemeInventory;
use crate::training::{reconstruct, PreparedCorpus, PreparedUtterance, ProsodyMode, Reconstruction};

pub const RAW: &str = "raw";

/// Metrics of one utterance under one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub speaker: String,
    pub system: String,
    pub mode: String,
    pub per: f64,
    pub speaker_similarity: f64,
    pub mel_distortion: f64,
    pub duration_mae: Option<f64>,
    pub log_f0_rmse: Option<f64>,
    pub discriminator: Option<f64>,
}

/// Per-system averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: String,
    pub utterances: usize,
    pub per: f64,
    pub speaker_similarity: f64,
    pub mel_distortion: f64,
    pub duration_mae: Option<f64>,
    pub log_f0_rmse: Option<f64>,
    pub discriminator: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<UtteranceMetrics>,
}

fn opt_mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| metrics::mean(&v))
}

impl EvalReport {
    pub fn systems(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.system) {
                out.push(r.system.clone());
            }
        }
        out
    }

    pub fn rows_of<'a>(&'a self, system: &'a str) -> impl Iterator<Item = &'a UtteranceMetrics> + 'a {
        self.rows.iter().filter(move |r| r.system == system)
    }

    pub fn summary(&self) -> Vec<SystemSummary> {
        self.systems()
            .into_iter()
            .map(|s| {
                let rows: Vec<&UtteranceMetrics> = self.rows_of(&s).collect();
                let m = |f: fn(&UtteranceMetrics) -> f64| metrics::mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                SystemSummary {
                    utterances: rows.len(),
                    per: m(|r| r.per),
                    speaker_similarity: m(|r| r.speaker_similarity),
                    mel_distortion: m(|r| r.mel_distortion),
                    duration_mae: opt_mean(rows.iter().map(|r| r.duration_mae)),
                    log_f0_rmse: opt_mean(rows.iter().map(|r| r.log_f0_rmse)),
                    discriminator: opt_mean(rows.iter().map(|r| r.discriminator)),
                    system: s,
                }
            })
            .collect()
    }

    /// Fraction of utterances on which `a` scores a strictly higher speaker
    /// similarity than `b`.
    pub fn similarity_win_rate(&self, a: &str, b: &str) -> Result<f64> {
        let theirs: BTreeMap<&str, f64> = self.rows_of(b).map(|r| (r.id.as_str(), r.speaker_similarity)).collect();
        let mut wins = 0;
        let mut n = 0;
        for r in self.rows_of(a) {
            if let Some(&o) = theirs.get(r.id.as_str()) {
                n += 1;
                wins += usize::from(r.speaker_similarity > o);
            }
        }
        if n == 0 {
            return Err(DsrError::Empty(format!("no utterances shared by {a} and {b}")));
        }
        Ok(wins as f64 / n as f64)
    }

    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>4} {:>7} {:>8} {:>9} {:>8} {:>9} {:>6}",
            "system", "n", "PER", "spk-sim", "mel-dist", "dur-MAE", "lf0-RMSE", "f_d"
        );
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{:<8} {:>4} {:>7.3} {:>8.3} {:>9.3} {:>8} {:>9} {:>6}",
                r.system,
                r.utterances,
                r.per,
                r.speaker_similarity,
                r.mel_distortion,
                fmt_opt(r.duration_mae),
                fmt_opt(r.log_f0_rmse),
                fmt_opt(r.discriminator)
            );
        }
        s
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Cosine between the embedding of `reconstruction` and the re-normalised
/// mean embedding of `references` (all 40-band, normalised).
pub fn speaker_similarity(
    encoder: &SpeakerEncoder,
    params: &ModelParams,
    reconstruction: &ndarray::Array2<f64>,
    references: &[&ndarray::Array2<f64>],
) -> Result<f64> {
    if references.is_empty() {
        return Err(DsrError::Empty("no reference utterances".into()));
    }
    let mut acc = vec![0.0; encoder.embed_dim()];
    for r in references {
        for (a, v) in acc.iter_mut().zip(encoder.embed(params, r)?.vector) {
            *a += v;
        }
    }
    let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let centroid = SpeakerEmbedding { vector: acc.into_iter().map(|v| v / n).collect() };
    Ok(encoder.embed(params, reconstruction)?.cosine(&centroid))
}

/// Holds everything that stays fixed across systems: the baseline speaker
/// encoder for similarity, the recogniser, and per-speaker reference
/// embeddings.
pub struct Evaluator<'a> {
    corpus: &'a PreparedCorpus,
    config: ModelConfig,
    speaker_encoder: ModelParams,
    recognizer: PhonemeRecognizer,
    toy: Option<ToyCorpusConfig>,
    references: BTreeMap<String, SpeakerEmbedding>,
}

impl<'a> Evaluator<'a> {
    /// `baseline` supplies the speaker encoder used for every similarity.
    pub fn new(corpus: &'a PreparedCorpus, baseline: &SystemBundle) -> Result<Self> {
        let recognizer = PhonemeRecognizer::fit(&corpus.healthy_train(), corpus.inventory.len())?;
        let toy = std::fs::read_to_string(corpus.manifest.root.join("corpus.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let mut ev = Self {
            corpus,
            config: baseline.config.clone(),
            speaker_encoder: baseline.get(ModuleTag::SpeakerEncoder)?.clone(),
            recognizer,
            toy,
            references: BTreeMap::new(),
        };
        for spk in corpus.manifest.speakers(None) {
            let utts = corpus.select(None, Some(&spk), Some(Split::Train));
            if !utts.is_empty() {
                let e = ev.centroid(&utts.iter().map(|u| &u.mel80).collect::<Vec<_>>())?;
                ev.references.insert(spk, e);
            }
        }
        Ok(ev)
    }

    pub fn recognizer(&self) -> &PhonemeRecognizer {
        &self.recognizer
    }

    /// Embedding of a normalised 80-band mel, re-banded to the speaker
    /// encoder's 40 bands.
    pub fn similarity_embedding(&self, mel80: &ndarray::Array2<f64>) -> Result<SpeakerEmbedding> {
        let raw80 = self.corpus.stats.mel80.denormalize(mel80)?;
        let mel40 = self.corpus.stats.mel40.normalize(&mel80_to_mel40(&raw80)?)?;
        SpeakerEncoder::new(&self.config).embed(&self.speaker_encoder, &mel40)
    }

    /// Unit-norm mean of the embeddings of several utterances.
    pub fn centroid(&self, mels: &[&ndarray::Array2<f64>]) -> Result<SpeakerEmbedding> {
        if mels.is_empty() {
            return Err(DsrError::Empty("no utterances for a speaker centroid".into()));
        }
        let mut acc = vec![0.0; self.config.embed_dim];
        for m in mels {
            for (a, v) in acc.iter_mut().zip(self.similarity_embedding(m)?.vector) {
                *a += v;
            }
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        Ok(SpeakerEmbedding { vector: acc.into_iter().map(|v| v / n).collect() })
    }

    pub fn reference(&self, speaker: &str) -> Result<&SpeakerEmbedding> {
        self.references
            .get(speaker)
            .ok_or_else(|| DsrError::Corpus(format!("no training utterances for speaker `{speaker}`")))
    }

    pub fn speaker_similarity(&self, mel80: &ndarray::Array2<f64>, speaker: &str) -> Result<f64> {
        Ok(self.similarity_embedding(mel80)?.cosine(self.reference(speaker)?))
    }

    pub fn per_of(&self, mel80: &ndarray::Array2<f64>, labels: &[usize]) -> Result<f64> {
        phoneme_error_rate(&self.recognizer.recognize(mel80)?, labels)
    }

    /// Scores of the unprocessed utterance.
    pub fn raw_metrics(&self, u: &PreparedUtterance) -> Result<UtteranceMetrics> {
        Ok(UtteranceMetrics {
            id: u.entry.id.clone(),
            speaker: u.entry.speaker.clone(),
            system: RAW.into(),
            mode: "-".into(),
            per: self.per_of(&u.mel80, &u.labels)?,
            speaker_similarity: self.speaker_similarity(&u.mel80, &u.entry.speaker)?,
            mel_distortion: 0.0,
            duration_mae: None,
            log_f0_rmse: None,
            discriminator: None,
        })
    }

    /// Durations and pitch pattern a healthy reading of the same text would
    /// have; only available for synthetic corpora.
    fn prosody_errors(&self, u: &PreparedUtterance, r: &Reconstruction) -> (Option<f64>, Option<f64>) {
        let Some(toy) = &self.toy else { return (None, None) };
        let labels = u.alignment.phonemes();
        if r.durations.len() != labels.len() {
            return (None, None);
        }
        let inv: &PhonemeInventory = &self.corpus.inventory;
        let normal = healthy_durations(toy.seed, inv, &labels);
        let mae = normal.iter().zip(&r.durations).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>()
            / labels.len() as f64;
        // per-phoneme mean log-F0 against the healthy pitch pattern, both
        // mean-removed over voiced phonemes
        let mut start = 0;
        let mut got = Vec::new();
        let mut want = Vec::new();
        for (&id, &d) in labels.iter().zip(&r.durations) {
            let seg = &r.log_f0[start..start + d];
            start += d;
            if inv.acoustics(id).is_some_and(|a| a.voiced) {
                got.push(seg.iter().sum::<f64>() / d as f64);
                want.push(pitch_offset(inv, id));
            }
        }
        if got.len() < 2 {
            return (Some(mae), None);
        }
        let (mg, mw) = (metrics::mean(&got), metrics::mean(&want));
        let rmse = (got.iter().zip(&want).map(|(g, w)| ((g - mg) - (w - mw)).powi(2)).sum::<f64>() / got.len() as f64).sqrt();
        (Some(mae), Some(rmse))
    }

    /// Reconstructs `u` with `bundle` and scores it. `disc` scores the
    /// output's centre crop when given.
    pub fn evaluate(
        &self,
        bundle: &SystemBundle,
        u: &PreparedUtterance,
        mode: ProsodyMode,
        disc: Option<&ModelParams>,
    ) -> Result<(UtteranceMetrics, Reconstruction)> {
        let r = reconstruct(bundle, u.into(), mode)?;
        let (duration_mae, log_f0_rmse) = self.prosody_errors(u, &r);
        let discriminator = match disc {
            Some(p) => {
                let d = Discriminator::new(&bundle.config);
                Some(d.score(p, &r.mel80, d.max_offset(r.mel80.nrows()) / 2)?)
            }
            None => None,
        };
        let m = UtteranceMetrics {
            id: u.entry.id.clone(),
            speaker: u.entry.speaker.clone(),
            system: bundle.label.to_string(),
            mode: mode.to_string(),
            per: self.per_of(&r.mel80, &u.labels)?,
            speaker_similarity: self.speaker_similarity(&r.mel80, &u.entry.speaker)?,
            mel_distortion: mel_distortion(&r.mel80, &u.mel80)?,
            duration_mae,
            log_f0_rmse,
            discriminator,
        };
        Ok((m, r))
    }

    /// Raw rows followed by one row per system per utterance.
    pub fn evaluate_set(&self, bundles: &[&SystemBundle], utts: &[&PreparedUtterance], mode: ProsodyMode) -> Result<EvalReport> {
        let disc = bundles.iter().find_map(|b| b.discriminator.as_ref());
        let mut rows = Vec::new();
        for u in utts {
            rows.push(self.raw_metrics(u)?);
        }
        for b in bundles {
            for u in utts {
                rows.push(self.evaluate(b, u, mode, disc)?.0);
            }
        }
        Ok(EvalReport { rows })
    }
}

/// Held-out utterances of the dysarthric speakers, optionally one speaker.
pub fn dysarthric_test<'a>(corpus: &'a PreparedCorpus, speaker: Option<&str>) -> Vec<&'a PreparedUtterance> {
    corpus.select(Some(Role::Dysarthric), speaker, Some(Split::Test))
}
