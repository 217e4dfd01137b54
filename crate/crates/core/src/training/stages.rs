//! The five supervised training stages of the reconstruction system.

use ndarray::Array2;
use rand::Rng;

use super::config::{SpeakerStageConfig, StageConfig};
use super::data::{PreparedCorpus, PreparedUtterance};
use super::report::ReportSink;
use super::trainer::{loss_and_grads, sample_batch, GradAccumulator, StepOutput, Trainer};
use crate::corpus::{derive_rng, Role, Split, TrainingCheckpoint};
use crate::error::{DsrError, Result};
use crate::models::{
    expand_by_duration, generation_loss, DurationPredictor, ExpandedEmbedding, Generator, ModelConfig,
    PitchPredictor, SpeakerEmbedding, SpeakerEncoder, SpeechEncoder,
};
use crate::nn::ModelParams;

pub const PRETRAIN_SE: &str = "pretrain-se";
pub const FINETUNE_SE: &str = "finetune-se";
pub const TRAIN_PROSODY: &str = "train-prosody";
pub const TRAIN_SPEAKER: &str = "train-spk";
pub const TRAIN_GENERATOR: &str = "train-gen";

/// Resume point and optional early stop for a stage run.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    pub resume: Option<TrainingCheckpoint>,
    /// Stop once this many total steps have been taken.
    pub stop_after: Option<u64>,
}

impl RunControl {
    fn until(&self, cfg: &StageConfig) -> u64 {
        self.stop_after.unwrap_or(cfg.steps)
    }
}

/// Seed for a module's initial weights.
pub fn init_seed(seed: u64, module: &str) -> u64 {
    derive_rng(seed, &format!("init:{module}")).gen()
}

fn nonempty<'a>(utts: Vec<&'a PreparedUtterance>, what: &str) -> Result<Vec<&'a PreparedUtterance>> {
    if utts.is_empty() {
        return Err(DsrError::Empty(format!("no {what} utterances")));
    }
    Ok(utts)
}

fn speech_encoder_loop(
    stage: &str,
    model: &ModelConfig,
    cfg: &StageConfig,
    seed: u64,
    init: ModelParams,
    data: &[&PreparedUtterance],
    control: RunControl,
    sink: &mut dyn ReportSink,
) -> Result<Trainer> {
    let se = SpeechEncoder::new(model);
    let until = control.until(cfg);
    let mut trainer = Trainer::start(stage, cfg.clone(), seed, vec![init], control.resume)?;
    trainer.run_until(
        until,
        sink,
        |params, rng| {
            let mut acc = GradAccumulator::new(params);
            for i in sample_batch(rng, data.len(), cfg.batch_size) {
                let u = data[i];
                let (loss, grads) = loss_and_grads(params, |g, b| se.loss(g, &b[0], &u.feat, &u.labels))?;
                acc.add(loss, &grads);
            }
            Ok(acc.finish())
        },
        |_| {},
    )?;
    Ok(trainer)
}

/// Trains the speech encoder from scratch on every healthy-voice training
/// utterance.
pub fn pretrain_speech_encoder(
    corpus: &PreparedCorpus,
    model: &ModelConfig,
    cfg: &StageConfig,
    seed: u64,
    control: RunControl,
    sink: &mut dyn ReportSink,
) -> Result<Trainer> {
    corpus.require_n_phonemes(model.n_phonemes)?;
    let data = nonempty(corpus.healthy_train(), "healthy training")?;
    let init = SpeechEncoder::new(model).init(init_seed(seed, "speech_encoder"));
    speech_encoder_loop(PRETRAIN_SE, model, cfg, seed, init, &data, control, sink)
}

/// Fine-tunes a copy of the pretrained encoder on one dysarthric speaker.
/// The pretrained parameters are only read.
pub fn finetune_speech_encoder(
    pretrained: &ModelParams,
    utterances: &[&PreparedUtterance],
    model: &ModelConfig,
    cfg: &StageConfig,
    seed: u64,
    control: RunControl,
    sink: &mut dyn ReportSink,
) -> Result<Trainer> {
    let first = utterances.first().ok_or_else(|| DsrError::Empty("no fine-tuning utterances".into()))?;
    if let Some(other) = utterances.iter().find(|u| u.entry.speaker != first.entry.speaker) {
        return Err(DsrError::Corpus(format!(
            "fine-tuning data mixes speakers `{}` and `{}`",
            first.entry.speaker, other.entry.speaker
        )));
    }
    speech_encoder_loop(FINETUNE_SE, model, cfg, seed, pretrained.clone(), utterances, control, sink)
}

/// The training split of one dysarthric speaker.
pub fn dysarthric_train<'a>(corpus: &'a PreparedCorpus, speaker: &str) -> Result<Vec<&'a PreparedUtterance>> {
    let utts = corpus.select(Some(Role::Dysarthric), Some(speaker), Some(Split::Train));
    if utts.is_empty() {
        return Err(DsrError::Corpus(format!("no training utterances for dysarthric speaker `{speaker}`")));
    }
    Ok(utts)
}

/// Posterior rows of the speech encoder with the decoder forced to the
/// utterance's labels, one row per aligned phoneme.
pub fn forced_embedding(se: &SpeechEncoder, params: &ModelParams, u: &PreparedUtterance) -> Result<Array2<f64>> {
    Ok(se.forced_posteriors(params, &u.feat, &u.alignment.phonemes())?.rows)
}

/// Trains duration and pitch predictors jointly on the prosody reference
/// speaker, with phoneme embeddings from `encoder`. Returns parameter sets in
/// that order.
pub fn train_prosody(
    corpus: &PreparedCorpus,
    encoder: &ModelParams,
    model: &ModelConfig,
    cfg: &StageConfig,
    seed: u64,
    control: RunControl,
    sink: &mut dyn ReportSink,
) -> Result<Trainer> {
    corpus.require_n_phonemes(model.n_phonemes)?;
    let reference = corpus.reference_speaker()?;
    let utts = nonempty(corpus.select(None, Some(&reference), Some(Split::Train)), "prosody reference")?;
    let se = SpeechEncoder::new(model);
    struct Item {
        pe: Array2<f64>,
        durations: Vec<usize>,
        expanded: Array2<f64>,
        log_f0: Vec<f64>,
    }
    let items: Vec<Item> = utts
        .iter()
        .map(|u| {
            let pe = forced_embedding(&se, encoder, u)?;
            let durations = u.alignment.durations();
            let expanded = expand_by_duration(&pe, &durations)?.rows;
            Ok(Item { pe, durations, expanded, log_f0: u.log_f0.clone() })
        })
        .collect::<Result<_>>()?;
    let n_ph: usize = items.iter().map(|i| i.durations.len()).sum();
    let mean_logd = items.iter().flat_map(|i| &i.durations).map(|&d| (d as f64).ln()).sum::<f64>() / n_ph as f64;
    let n_fr: usize = items.iter().map(|i| i.log_f0.len()).sum();
    let mean_f0 = items.iter().flat_map(|i| &i.log_f0).sum::<f64>() / n_fr as f64;

    let dp = DurationPredictor::new(model);
    let pp = PitchPredictor::new(model);
    let init = vec![dp.init(init_seed(seed, "duration"), mean_logd), pp.init(init_seed(seed, "pitch"), mean_f0)];
    let until = control.until(cfg);
    let mut trainer = Trainer::start(TRAIN_PROSODY, cfg.clone(), seed, init, control.resume)?;
    trainer.run_until(
        until,
        sink,
        |params, rng| {
            let mut acc = GradAccumulator::new(params);
            let (mut ld, mut lp) = (0.0, 0.0);
            let batch = sample_batch(rng, items.len(), cfg.batch_size);
            for &i in &batch {
                let it = &items[i];
                let mut parts = (0.0, 0.0);
                let (loss, grads) = loss_and_grads(params, |g, b| {
                    let d = dp.loss(g, &b[0], &it.pe, &it.durations)?;
                    let p = pp.loss(g, &b[1], &it.expanded, &it.log_f0)?;
                    parts = (g.scalar_value(d), g.scalar_value(p));
                    Ok(g.add(d, p))
                })?;
                ld += parts.0;
                lp += parts.1;
                acc.add(loss, &grads);
            }
            let mut out = acc.finish();
            let n = batch.len() as f64;
            out.extra = vec![("duration", ld / n), ("pitch", lp / n)];
            Ok(out)
        },
        |_| {},
    )?;
    Ok(trainer)
}

/// Fixed-length window of `mel` starting at `offset`, wrapping around when
/// the utterance is shorter than the window.
pub fn crop_frames(mel: &Array2<f64>, len: usize, offset: usize) -> Array2<f64> {
    let t = mel.nrows();
    Array2::from_shape_fn((len, mel.ncols()), |(i, j)| mel[[(offset + i) % t, j]])
}

/// GE2E training on every healthy-voice speaker.
pub fn train_speaker_encoder(
    corpus: &PreparedCorpus,
    model: &ModelConfig,
    cfg: &SpeakerStageConfig,
    seed: u64,
    control: RunControl,
    sink: &mut dyn ReportSink,
) -> Result<Trainer> {
    let utts = corpus.healthy_train();
    let mut speakers: Vec<String> = utts.iter().map(|u| u.entry.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let pools: Vec<Vec<&PreparedUtterance>> =
        speakers.iter().map(|s| utts.iter().copied().filter(|u| &u.entry.speaker == s).collect()).collect();
    if pools.len() < cfg.speakers {
        return Err(DsrError::Corpus(format!(
            "speaker batches need {} speakers, the corpus has {}",
            cfg.speakers,
            pools.len()
        )));
    }
    if let Some((s, _)) = speakers.iter().zip(&pools).find(|(_, p)| p.len() < cfg.utterances) {
        return Err(DsrError::Corpus(format!("speaker `{s}` has fewer than {} training utterances", cfg.utterances)));
    }
    let enc = SpeakerEncoder::new(model);
    let init = enc.init(init_seed(seed, "speaker_encoder"));
    let until = control.until(&cfg.stage);
    let mut trainer = Trainer::start(TRAIN_SPEAKER, cfg.stage.clone(), seed, vec![init], control.resume)?;
    trainer.run_until(
        until,
        sink,
        |params, rng| {
            let mut crops = Vec::with_capacity(cfg.speakers * cfg.utterances);
            for s in sample_batch(rng, pools.len(), cfg.speakers) {
                for i in sample_batch(rng, pools[s].len(), cfg.utterances) {
                    let mel = &pools[s][i].mel40;
                    let offset = rng.gen_range(0..=mel.nrows().saturating_sub(cfg.crop_frames));
                    crops.push(crop_frames(mel, cfg.crop_frames, offset));
                }
            }
            let (loss, grads) = loss_and_grads(params, |g, b| {
                enc.ge2e_batch_loss(g, &b[0], &crops, cfg.speakers, cfg.utterances)
            })?;
            Ok(StepOutput { loss, extra: vec![], grads })
        },
        |params| SpeakerEncoder::clamp_ge2e(&mut params[0]),
    )?;
    Ok(trainer)
}

/// One generator training example with its conditioning precomputed.
#[derive(Clone, Debug)]
pub struct GeneratorExample {
    pub id: String,
    pub expanded: ExpandedEmbedding,
    pub log_f0: Vec<f64>,
    pub embedding: SpeakerEmbedding,
    pub target: Array2<f64>,
}

/// Ground-truth conditioning for `u`: forced embeddings expanded by the
/// aligned durations, its own interpolated log-F0, and the embedding of its
/// own speech.
pub fn generator_example(
    model: &ModelConfig,
    encoder: &ModelParams,
    speaker: &ModelParams,
    u: &PreparedUtterance,
) -> Result<GeneratorExample> {
    let se = SpeechEncoder::new(model);
    let pe = forced_embedding(&se, encoder, u)?;
    Ok(GeneratorExample {
        id: u.entry.id.clone(),
        expanded: expand_by_duration(&pe, &u.alignment.durations())?,
        log_f0: u.log_f0.clone(),
        embedding: SpeakerEncoder::new(model).embed(speaker, &u.mel40)?,
        target: u.mel80.clone(),
    })
}

/// Trains the generator on healthy-voice speech. The speech and speaker
/// encoders are only read, to precompute conditioning.
pub fn train_generator(
    corpus: &PreparedCorpus,
    encoder: &ModelParams,
    speaker: &ModelParams,
    model: &ModelConfig,
    cfg: &StageConfig,
    seed: u64,
    control: RunControl,
    sink: &mut dyn ReportSink,
) -> Result<Trainer> {
    corpus.require_n_phonemes(model.n_phonemes)?;
    let data = nonempty(corpus.healthy_train(), "healthy training")?;
    let examples: Vec<GeneratorExample> =
        data.iter().map(|u| generator_example(model, encoder, speaker, u)).collect::<Result<_>>()?;
    let gen = Generator::new(model);
    let init = gen.init(init_seed(seed, "generator"));
    let until = control.until(cfg);
    let mut trainer = Trainer::start(TRAIN_GENERATOR, cfg.clone(), seed, vec![init], control.resume)?;
    trainer.run_until(
        until,
        sink,
        |params, rng| {
            let mut acc = GradAccumulator::new(params);
            for i in sample_batch(rng, examples.len(), cfg.batch_size) {
                let ex = &examples[i];
                let (loss, grads) = loss_and_grads(params, |g, b| generator_loss(&gen, g, &b[0], ex))?;
                acc.add(loss, &grads);
            }
            Ok(acc.finish())
        },
        |_| {},
    )?;
    Ok(trainer)
}

/// Reconstruction loss of one example inside `g`.
pub fn generator_loss(
    gen: &Generator,
    g: &mut crate::nn::Graph,
    b: &crate::nn::Bound,
    ex: &GeneratorExample,
) -> Result<crate::nn::Var> {
    let (x, f, e) = gen.input_vars(g, &ex.expanded, &ex.log_f0, &ex.embedding)?;
    let z = gen.forward(g, b, x, f, e);
    let m = g.constant(ex.target.clone());
    Ok(generation_loss(g, z, m))
}
