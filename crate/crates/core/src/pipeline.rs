//! File-backed orchestration of the training stages inside a work
//! directory, shared by the command line and the end-to-end tests.

use std::path::{Path, PathBuf};

use crate::asa::{prepare_adaptation_set, AsaTrainer, GradMode, STAGE as ASA_STAGE};
use crate::corpus::{load_bundle, save_bundle, Manifest, Role, Split, TrainingCheckpoint};
use crate::error::{DsrError, Result};
use crate::models::{ModelConfig, SystemBundle, SystemLabel};
use crate::nn::ModelParams;
use crate::training::data::{prepare_corpus, FeatureStats, PreparedCorpus};
use crate::training::report::{JsonlSink, ReportSink};
use crate::training::stages::{self, RunControl};
use crate::training::{RunConfig, Trainer};

/// Steps between intermediate checkpoints.
pub const CHECKPOINT_EVERY: u64 = 500;

pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("logs"))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn log_path(&self, stage: &str) -> PathBuf {
        self.dir.join("logs").join(format!("{stage}.jsonl"))
    }

    pub fn pretrained_se(&self) -> PathBuf {
        self.path("se_pretrained.ckpt")
    }

    pub fn finetuned_se(&self, speaker: &str) -> PathBuf {
        self.path(&format!("se_{speaker}.ckpt"))
    }

    pub fn prosody(&self) -> PathBuf {
        self.path("prosody.ckpt")
    }

    pub fn speaker_encoder(&self) -> PathBuf {
        self.path("speaker_encoder.ckpt")
    }

    pub fn generator(&self) -> PathBuf {
        self.path("generator.ckpt")
    }

    pub fn sv_bundle(&self, speaker: &str) -> PathBuf {
        self.path(&format!("sv_{speaker}.ckpt"))
    }

    pub fn asa_bundle(&self, speaker: &str) -> PathBuf {
        self.path(&format!("asa_{speaker}.ckpt"))
    }

    pub fn asa_state(&self, speaker: &str) -> PathBuf {
        self.path(&format!("asa_{speaker}.state.ckpt"))
    }

    /// Feature statistics are fixed by the first run and reused after.
    pub fn load_corpus(&self, corpus_dir: &Path) -> Result<PreparedCorpus> {
        let manifest = Manifest::load(corpus_dir)?;
        manifest.validate()?;
        let stats_dir = self.path("stats");
        let stats = if stats_dir.join(FeatureStats::FILES[0]).exists() { Some(FeatureStats::load(&stats_dir)?) } else { None };
        let fresh = stats.is_none();
        let corpus = prepare_corpus(&manifest, stats)?;
        if fresh {
            corpus.stats.save(&stats_dir)?;
        }
        Ok(corpus)
    }

    /// Model widths for this workspace: fixed on first use, checked after.
    pub fn model_config(&self, run: &RunConfig, corpus: &PreparedCorpus) -> Result<ModelConfig> {
        let mut cfg = run.model.clone();
        cfg.n_phonemes = corpus.inventory.len();
        let path = self.path("model_config.json");
        if path.exists() {
            let stored: ModelConfig = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            if stored != cfg {
                return Err(DsrError::Config(format!(
                    "{} was created with different model settings (profile changed?)",
                    self.dir.display()
                )));
            }
        } else {
            std::fs::write(&path, serde_json::to_string_pretty(&cfg)?)?;
        }
        Ok(cfg)
    }

    fn sink(&self, stage: &str, append: bool) -> Result<JsonlSink> {
        if append {
            JsonlSink::append(&self.log_path(stage))
        } else {
            JsonlSink::create(&self.log_path(stage))
        }
    }

    /// Runs a stage in chunks, checkpointing to `file` after each one.
    /// With `resume`, continues from `file` if it holds an unfinished run.
    pub fn drive<F>(&self, stage: &str, file: &Path, total: u64, resume: bool, mut run: F) -> Result<Trainer>
    where
        F: FnMut(RunControl, &mut dyn ReportSink) -> Result<Trainer>,
    {
        let mut ck = if resume && file.exists() { Some(TrainingCheckpoint::load(file)?) } else { None };
        let mut sink = self.sink(stage, ck.is_some())?;
        loop {
            let start = ck.as_ref().map_or(0, |c| c.step);
            let stop = (start + CHECKPOINT_EVERY).min(total);
            let t = run(RunControl { resume: ck.take(), stop_after: Some(stop) }, &mut sink)?;
            t.checkpoint().save(file)?;
            if t.step >= total {
                return Ok(t);
            }
            ck = Some(t.checkpoint());
        }
    }
}

/// First parameter set of a finished stage checkpoint.
pub fn stage_params(path: &Path, stage: &str) -> Result<Vec<ModelParams>> {
    if !path.exists() {
        return Err(DsrError::MissingFile(path.to_path_buf()));
    }
    let ck = TrainingCheckpoint::load(path)?;
    if ck.stage != stage {
        return Err(DsrError::MalformedCheckpoint(format!("{} holds `{}`, expected `{stage}`", path.display(), ck.stage)));
    }
    Ok(ck.params)
}

/// A whole run: configuration, work directory and prepared corpus.
pub struct Pipeline {
    pub run: RunConfig,
    pub ws: Workspace,
    pub corpus: PreparedCorpus,
    pub model: ModelConfig,
}

impl Pipeline {
    pub fn open(run: RunConfig) -> Result<Self> {
        run.training.validate()?;
        let ws = Workspace::open(&run.work_dir)?;
        let corpus = ws.load_corpus(&run.corpus_dir)?;
        let model = ws.model_config(&run, &corpus)?;
        Ok(Self { run, ws, corpus, model })
    }

    pub fn pretrain_se(&self, resume: bool) -> Result<Trainer> {
        let cfg = &self.run.training.pretrain_se;
        let t = self.ws.drive(stages::PRETRAIN_SE, &self.ws.pretrained_se(), cfg.steps, resume, |c, s| {
            stages::pretrain_speech_encoder(&self.corpus, &self.model, cfg, self.run.seed, c, s)
        })?;
        self.assemble_all()?;
        Ok(t)
    }

    pub fn finetune_se(&self, speaker: &str, resume: bool) -> Result<Trainer> {
        let pre = stage_params(&self.ws.pretrained_se(), stages::PRETRAIN_SE)?;
        let data = stages::dysarthric_train(&self.corpus, speaker)?;
        let cfg = &self.run.training.finetune_se;
        let log = format!("{}_{speaker}", stages::FINETUNE_SE);
        let t = self.ws.drive(&log, &self.ws.finetuned_se(speaker), cfg.steps, resume, |c, s| {
            stages::finetune_speech_encoder(&pre[0], &data, &self.model, cfg, self.run.seed, c, s)
        })?;
        self.assemble_all()?;
        Ok(t)
    }

    pub fn train_prosody(&self, resume: bool) -> Result<Trainer> {
        let pre = stage_params(&self.ws.pretrained_se(), stages::PRETRAIN_SE)?;
        let cfg = &self.run.training.prosody;
        let t = self.ws.drive(stages::TRAIN_PROSODY, &self.ws.prosody(), cfg.steps, resume, |c, s| {
            stages::train_prosody(&self.corpus, &pre[0], &self.model, cfg, self.run.seed, c, s)
        })?;
        self.assemble_all()?;
        Ok(t)
    }

    pub fn train_speaker(&self, resume: bool) -> Result<Trainer> {
        let cfg = &self.run.training.speaker;
        let t = self.ws.drive(stages::TRAIN_SPEAKER, &self.ws.speaker_encoder(), cfg.stage.steps, resume, |c, s| {
            stages::train_speaker_encoder(&self.corpus, &self.model, cfg, self.run.seed, c, s)
        })?;
        self.assemble_all()?;
        Ok(t)
    }

    pub fn train_generator(&self, resume: bool) -> Result<Trainer> {
        let pre = stage_params(&self.ws.pretrained_se(), stages::PRETRAIN_SE)?;
        let spk = stage_params(&self.ws.speaker_encoder(), stages::TRAIN_SPEAKER)?;
        let cfg = &self.run.training.generator;
        let t = self.ws.drive(stages::TRAIN_GENERATOR, &self.ws.generator(), cfg.steps, resume, |c, s| {
            stages::train_generator(&self.corpus, &pre[0], &spk[0], &self.model, cfg, self.run.seed, c, s)
        })?;
        self.assemble_all()?;
        Ok(t)
    }

    /// The SV-DSR system for `speaker` from the stage checkpoints.
    pub fn assemble_sv(&self, speaker: &str) -> Result<SystemBundle> {
        let mut b = SystemBundle::empty(SystemLabel::SvDsr, self.model.clone());
        b.set(stage_params(&self.ws.finetuned_se(speaker), stages::FINETUNE_SE)?.remove(0));
        let mut pros = stage_params(&self.ws.prosody(), stages::TRAIN_PROSODY)?;
        b.set(pros.remove(1));
        b.set(pros.remove(0));
        b.set(stage_params(&self.ws.speaker_encoder(), stages::TRAIN_SPEAKER)?.remove(0));
        b.set(stage_params(&self.ws.generator(), stages::TRAIN_GENERATOR)?.remove(0));
        b.validate()?;
        Ok(b)
    }

    /// Writes an SV-DSR bundle for every speaker whose components all exist.
    pub fn assemble_all(&self) -> Result<Vec<String>> {
        let mut done = Vec::new();
        for spk in self.corpus.manifest.speakers(Some(Role::Dysarthric)) {
            match self.assemble_sv(&spk) {
                Ok(b) => {
                    save_bundle(&b, &self.ws.sv_bundle(&spk))?;
                    done.push(spk);
                }
                Err(DsrError::MissingFile(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(done)
    }

    pub fn load_sv(&self, speaker: &str) -> Result<SystemBundle> {
        let path = self.ws.sv_bundle(speaker);
        if !path.exists() {
            return Err(DsrError::MissingFile(path));
        }
        let b = load_bundle(&path)?;
        if b.label != SystemLabel::SvDsr {
            return Err(DsrError::Config(format!("{} is not an SV-DSR system", path.display())));
        }
        Ok(b)
    }

    /// Adapts the speaker's SV-DSR system and writes the ASA-DSR bundle.
    pub fn adapt_asa(&self, speaker: &str, mode: GradMode, resume: bool) -> Result<SystemBundle> {
        let sv = self.load_sv(speaker)?;
        let utts = self.corpus.select(Some(Role::Dysarthric), Some(speaker), Some(Split::Train));
        let set = prepare_adaptation_set(&sv, &utts)?;
        let cfg = self.run.training.asa.clone();
        let state = self.ws.asa_state(speaker);
        let mut t = if resume && state.exists() {
            AsaTrainer::resume(&sv, cfg.clone(), self.run.seed, TrainingCheckpoint::load(&state)?)?
        } else {
            AsaTrainer::new(&sv, cfg.clone(), self.run.seed)?
        }
        .with_mode(mode);
        let log = format!("{ASA_STAGE}_{speaker}");
        let mut sink = self.ws.sink(&log, resume && state.exists())?;
        while t.step < cfg.stage.steps {
            let stop = (t.step + CHECKPOINT_EVERY).min(cfg.stage.steps);
            t.run_until(&set, stop, &mut sink)?;
            t.checkpoint().save(&state)?;
        }
        let asa = t.bundle()?;
        save_bundle(&asa, &self.ws.asa_bundle(speaker))?;
        Ok(asa)
    }
}
