//! Run profiles and stage hyper-parameters.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};
use crate::models::ModelConfig;
use crate::nn::OptimizerKind;

/// Named hyper-parameter presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale step counts; kept for reference, far beyond a laptop budget.
    Paper,
    /// Reduced step counts for a single CPU.
    Desk,
    /// A handful of steps per stage, for plumbing tests.
    Smoke,
}

impl FromStr for Profile {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            "smoke" => Ok(Profile::Smoke),
            other => Err(DsrError::Config(format!("unknown profile `{other}` (paper, desk, smoke)"))),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
            Profile::Smoke => "smoke",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip: f64,
}

impl StageConfig {
    pub fn new(optimizer: OptimizerKind, lr: f64, batch_size: usize, steps: u64) -> Self {
        Self { optimizer, lr, batch_size, steps, clip: 5.0 }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !self.clip.is_finite() || self.clip < 0.0 {
            return Err(DsrError::Config(format!("invalid `{name}` stage settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStageConfig {
    #[serde(flatten)]
    pub stage: StageConfig,
    /// Speakers per batch.
    pub speakers: usize,
    /// Utterances per speaker per batch.
    pub utterances: usize,
    /// Frames per training crop.
    pub crop_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsaStageConfig {
    #[serde(flatten)]
    pub stage: StageConfig,
    /// Weight of the discrimination term in the multi-task loss.
    pub lambda: f64,
}

/// Every stage of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub pretrain_se: StageConfig,
    pub finetune_se: StageConfig,
    pub prosody: StageConfig,
    pub speaker: SpeakerStageConfig,
    pub generator: StageConfig,
    pub asa: AsaStageConfig,
}

impl TrainingConfig {
    pub fn for_profile(profile: Profile) -> Self {
        use OptimizerKind::{Adadelta, Adam};
        let steps: [u64; 6] = match profile {
            Profile::Paper => [1_000_000, 2_000, 30_000, 50_000, 50_000, 5_000],
            Profile::Desk => [2_000, 300, 1_000, 1_500, 2_000, 500],
            Profile::Smoke => [3, 2, 3, 3, 3, 3],
        };
        // shorter adaptation runs take larger steps
        let asa_lr = if profile == Profile::Paper { 1e-4 } else { 1e-3 };
        let (spk_n, spk_m) = match profile {
            Profile::Paper => (16, 8),
            _ => (4, 4),
        };
        Self {
            pretrain_se: StageConfig::new(Adadelta, 1.0, 8, steps[0]),
            finetune_se: StageConfig::new(Adadelta, 1.0, 8, steps[1]),
            prosody: StageConfig::new(Adam, 1e-3, 16, steps[2]),
            speaker: SpeakerStageConfig {
                stage: StageConfig::new(Adam, 1e-3, spk_n * spk_m, steps[3]),
                speakers: spk_n,
                utterances: spk_m,
                crop_frames: 40,
            },
            generator: StageConfig::new(Adam, 1e-3, 16, steps[4]),
            asa: AsaStageConfig { stage: StageConfig::new(Adam, asa_lr, 8, steps[5]), lambda: 1.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain_se.validate("pretrain_se")?;
        self.finetune_se.validate("finetune_se")?;
        self.prosody.validate("prosody")?;
        self.speaker.stage.validate("speaker")?;
        self.generator.validate("generator")?;
        self.asa.stage.validate("asa")?;
        if self.speaker.speakers < 2 || self.speaker.utterances < 2 || self.speaker.crop_frames == 0 {
            return Err(DsrError::Config("speaker batches need at least 2 speakers × 2 utterances".into()));
        }
        if !self.asa.lambda.is_finite() || self.asa.lambda < 0.0 {
            return Err(DsrError::Config(format!("lambda must be non-negative, got {}", self.asa.lambda)));
        }
        Ok(())
    }
}

/// Model widths for a profile.
pub fn model_config_for(profile: Profile) -> ModelConfig {
    match profile {
        Profile::Paper => ModelConfig { spk_hidden: 256, ..ModelConfig::default() },
        Profile::Desk => ModelConfig::default(),
        Profile::Smoke => ModelConfig { n_phonemes: ModelConfig::default().n_phonemes, embed_dim: 16, ..ModelConfig::tiny() },
    }
}

/// Step-count overrides read from a run file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepOverrides {
    pub pretrain_se: Option<u64>,
    pub finetune_se: Option<u64>,
    pub prosody: Option<u64>,
    pub speaker: Option<u64>,
    pub generator: Option<u64>,
    pub asa: Option<u64>,
}

/// The TOML run file accepted by `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub corpus_dir: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub lambda: Option<f64>,
    #[serde(default)]
    pub steps: StepOverrides,
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DsrError::Config(format!("bad run file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| DsrError::MissingFile(path.to_path_buf()))?;
        Self::parse(&text)
    }
}

/// Resolved settings for a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub corpus_dir: PathBuf,
    pub work_dir: PathBuf,
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl RunConfig {
    pub fn new(profile: Profile, seed: u64) -> Self {
        Self {
            profile,
            seed,
            corpus_dir: PathBuf::from("corpus"),
            work_dir: PathBuf::from("work"),
            model: model_config_for(profile),
            training: TrainingConfig::for_profile(profile),
        }
    }

    /// Layers a run file and explicit flags over the profile defaults.
    /// Flags win over the file.
    pub fn resolve(file: Option<&RunFile>, profile: Option<Profile>, seed: Option<u64>) -> Result<Self> {
        let empty = RunFile::default();
        let file = file.unwrap_or(&empty);
        let profile = profile.or(file.profile).unwrap_or(Profile::Desk);
        let seed = seed.or(file.seed).unwrap_or(1234);
        let mut cfg = Self::new(profile, seed);
        if let Some(d) = &file.corpus_dir {
            cfg.corpus_dir = d.clone();
        }
        if let Some(d) = &file.work_dir {
            cfg.work_dir = d.clone();
        }
        if let Some(l) = file.lambda {
            cfg.training.asa.lambda = l;
        }
        let t = &mut cfg.training;
        let s = &file.steps;
        for (slot, over) in [
            (&mut t.pretrain_se.steps, s.pretrain_se),
            (&mut t.finetune_se.steps, s.finetune_se),
            (&mut t.prosody.steps, s.prosody),
            (&mut t.speaker.stage.steps, s.speaker),
            (&mut t.generator.steps, s.generator),
            (&mut t.asa.stage.steps, s.asa),
        ] {
            if let Some(v) = over {
                *slot = v;
            }
        }
        cfg.training.validate()?;
        Ok(cfg)
    }
}
