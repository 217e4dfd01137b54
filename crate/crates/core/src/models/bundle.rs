//! The set of parameter groups that makes up one reconstruction system.

use std::fmt;
use std::str::FromStr;

use super::ModelConfig;
use crate::error::{DsrError, Result};
use crate::nn::{ModelParams, ModuleTag};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemLabel {
    SvDsr,
    AsaDsr,
}

impl SystemLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemLabel::SvDsr => "SV-DSR",
            SystemLabel::AsaDsr => "ASA-DSR",
        }
    }
}

impl fmt::Display for SystemLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemLabel {
    type Err = DsrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SV-DSR" => Ok(SystemLabel::SvDsr),
            "ASA-DSR" => Ok(SystemLabel::AsaDsr),
            other => Err(DsrError::MalformedCheckpoint(format!("unknown system label `{other}`"))),
        }
    }
}

/// Speech encoder, prosody corrector, speaker encoder and generator, plus an
/// optional discriminator. Slots may be empty while training is under way.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemBundle {
    pub label: SystemLabel,
    pub config: ModelConfig,
    pub speech_encoder: Option<ModelParams>,
    pub duration_predictor: Option<ModelParams>,
    pub pitch_predictor: Option<ModelParams>,
    pub speaker_encoder: Option<ModelParams>,
    pub generator: Option<ModelParams>,
    pub discriminator: Option<ModelParams>,
}

impl SystemBundle {
    pub fn empty(label: SystemLabel, config: ModelConfig) -> Self {
        Self {
            label,
            config,
            speech_encoder: None,
            duration_predictor: None,
            pitch_predictor: None,
            speaker_encoder: None,
            generator: None,
            discriminator: None,
        }
    }

    pub fn slot(&self, tag: ModuleTag) -> Option<&ModelParams> {
        match tag {
            ModuleTag::SpeechEncoder => self.speech_encoder.as_ref(),
            ModuleTag::DurationPredictor => self.duration_predictor.as_ref(),
            ModuleTag::PitchPredictor => self.pitch_predictor.as_ref(),
            ModuleTag::SpeakerEncoder => self.speaker_encoder.as_ref(),
            ModuleTag::Generator => self.generator.as_ref(),
            ModuleTag::Discriminator => self.discriminator.as_ref(),
        }
    }

    pub fn slot_mut(&mut self, tag: ModuleTag) -> &mut Option<ModelParams> {
        match tag {
            ModuleTag::SpeechEncoder => &mut self.speech_encoder,
            ModuleTag::DurationPredictor => &mut self.duration_predictor,
            ModuleTag::PitchPredictor => &mut self.pitch_predictor,
            ModuleTag::SpeakerEncoder => &mut self.speaker_encoder,
            ModuleTag::Generator => &mut self.generator,
            ModuleTag::Discriminator => &mut self.discriminator,
        }
    }

    /// Stores `params` in the slot named by its tag.
    pub fn set(&mut self, params: ModelParams) {
        let tag = params.tag();
        *self.slot_mut(tag) = Some(params);
    }

    pub fn get(&self, tag: ModuleTag) -> Result<&ModelParams> {
        self.slot(tag).ok_or_else(|| DsrError::IncompleteBundle(format!("missing {tag}")))
    }

    pub const REQUIRED: [ModuleTag; 5] = [
        ModuleTag::SpeechEncoder,
        ModuleTag::DurationPredictor,
        ModuleTag::PitchPredictor,
        ModuleTag::SpeakerEncoder,
        ModuleTag::Generator,
    ];

    /// All five reconstruction slots are filled and agree on widths.
    pub fn validate(&self) -> Result<()> {
        let missing: Vec<&str> =
            Self::REQUIRED.iter().filter(|t| self.slot(**t).is_none()).map(|t| t.as_str()).collect();
        if !missing.is_empty() {
            return Err(DsrError::IncompleteBundle(format!("missing {}", missing.join(", "))));
        }
        for tag in ModuleTag::ALL {
            if let Some(p) = self.slot(tag) {
                if p.tag() != tag {
                    return Err(DsrError::IncompleteBundle(format!("slot {tag} holds {}", p.tag())));
                }
            }
        }
        let c = &self.config;
        let checks = [
            (ModuleTag::SpeechEncoder, "out.b", (1, c.n_phonemes)),
            (ModuleTag::DurationPredictor, "conv1.w", (c.dur_kernel * c.n_phonemes, c.pred_channels)),
            (ModuleTag::PitchPredictor, "conv1.w", (c.pitch_kernel * c.n_phonemes, c.pred_channels)),
            (ModuleTag::SpeakerEncoder, "proj.b", (1, c.embed_dim)),
            (ModuleTag::Generator, "in.w", (c.n_phonemes + 1 + c.embed_dim, c.gen_channels)),
            (ModuleTag::Generator, "out.b", (1, c.out_mels)),
        ];
        for (tag, name, shape) in checks {
            let p = self.get(tag)?;
            match p.try_get(name) {
                Some(t) if t.dim() == shape => {}
                Some(t) => {
                    return Err(DsrError::IncompleteBundle(format!(
                        "{tag}.{name} is {:?}, expected {shape:?}",
                        t.dim()
                    )))
                }
                None => return Err(DsrError::IncompleteBundle(format!("{tag} lacks `{name}`"))),
            }
        }
        Ok(())
    }

    /// Checksums of the five reconstruction slots, in `REQUIRED` order.
    pub fn checksums(&self) -> Result<Vec<(ModuleTag, String)>> {
        Self::REQUIRED.iter().map(|&t| Ok((t, self.get(t)?.checksum()))).collect()
    }
}
