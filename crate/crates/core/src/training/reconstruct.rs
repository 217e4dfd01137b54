//! Inference: dysarthric features in, healthy-sounding mel-spectrogram out.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use super::data::PreparedUtterance;
use crate::error::{DsrError, Result};
use crate::features::PhonemeAlignment;
use crate::models::{
    expand_by_duration, DurationPredictor, Generator, PhonemeEmbeddingSeq, PitchPredictor, SpeakerEmbedding,
    SpeakerEncoder, SpeechEncoder, SystemBundle,
};
use crate::nn::ModuleTag;

/// Where durations and pitch come from: ground truth (G) or predicted (P),
/// durations first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProsodyMode {
    GG,
    GP,
    PP,
}

impl FromStr for ProsodyMode {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GG" => Ok(ProsodyMode::GG),
            "GP" => Ok(ProsodyMode::GP),
            "PP" => Ok(ProsodyMode::PP),
            _ => Err(DsrError::Config(format!("unknown prosody mode `{s}` (GG, GP, PP)"))),
        }
    }
}

impl fmt::Display for ProsodyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProsodyMode::GG => "GG",
            ProsodyMode::GP => "GP",
            ProsodyMode::PP => "PP",
        })
    }
}

/// What the system is given about one input utterance.
#[derive(Clone, Copy, Debug)]
pub struct ReconstructionInput<'a> {
    /// Normalised 120-dim features.
    pub feat: &'a Array2<f64>,
    /// Normalised 40-band log-mel, for the speaker encoder.
    pub mel40: &'a Array2<f64>,
    pub alignment: Option<&'a PhonemeAlignment>,
    /// Interpolated log-F0 per frame.
    pub log_f0: Option<&'a [f64]>,
}

impl<'a> From<&'a PreparedUtterance> for ReconstructionInput<'a> {
    fn from(u: &'a PreparedUtterance) -> Self {
        Self { feat: &u.feat, mel40: &u.mel40, alignment: Some(&u.alignment), log_f0: Some(&u.log_f0) }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Normalised 80-band log-mel.
    pub mel80: Array2<f64>,
    pub phonemes: PhonemeEmbeddingSeq,
    pub durations: Vec<usize>,
    pub log_f0: Vec<f64>,
    pub embedding: SpeakerEmbedding,
}

/// Runs a complete bundle on one utterance.
///
/// GG and GP read the phoneme sequence and durations from the alignment and
/// force the decoder along it; PP decodes freely and predicts durations.
pub fn reconstruct(bundle: &SystemBundle, input: ReconstructionInput<'_>, mode: ProsodyMode) -> Result<Reconstruction> {
    bundle.validate()?;
    let cfg = &bundle.config;
    let se = SpeechEncoder::new(cfg);
    let se_p = bundle.get(ModuleTag::SpeechEncoder)?;
    let (phonemes, durations) = match mode {
        ProsodyMode::GG | ProsodyMode::GP => {
            let al = input
                .alignment
                .ok_or_else(|| DsrError::Config(format!("{mode} reconstruction needs a phoneme alignment")))?;
            al.check_frames(input.feat.nrows())?;
            (se.forced_posteriors(se_p, input.feat, &al.phonemes())?, al.durations())
        }
        ProsodyMode::PP => {
            let pe = se.decode(se_p, input.feat)?;
            if pe.is_empty() {
                return Err(DsrError::Empty("the speech encoder decoded no phonemes".into()));
            }
            let d = DurationPredictor::new(cfg).predict(bundle.get(ModuleTag::DurationPredictor)?, &pe.rows)?;
            (pe, d)
        }
    };
    let expanded = expand_by_duration(&phonemes.rows, &durations)?;
    let log_f0 = match mode {
        ProsodyMode::GG => {
            let f0 = input.log_f0.ok_or_else(|| DsrError::Config("GG reconstruction needs a pitch track".into()))?;
            if f0.len() != expanded.frames() {
                return Err(DsrError::FrameCountMismatch { alignment: expanded.frames(), utterance: f0.len() });
            }
            f0.to_vec()
        }
        _ => PitchPredictor::new(cfg).predict(bundle.get(ModuleTag::PitchPredictor)?, &expanded.rows)?,
    };
    let embedding = SpeakerEncoder::new(cfg).embed(bundle.get(ModuleTag::SpeakerEncoder)?, input.mel40)?;
    let mel80 = Generator::new(cfg).generate(bundle.get(ModuleTag::Generator)?, &expanded, &log_f0, &embedding)?;
    Ok(Reconstruction { mel80, phonemes, durations, log_f0, embedding })
}
