//! Adversarial speaker adaptation: retune a copy of the speaker encoder on a
//! dysarthric speaker while a discriminator keeps the reconstructions close
//! to the baseline system's.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{derive_rng, TrainingCheckpoint};
use crate::error::{DsrError, Result};
use crate::models::{
    discrimination_loss, expand_by_duration, generation_loss, mtl_loss_var, Discriminator, DurationPredictor,
    ExpandedEmbedding, Generator, ModelConfig, PitchPredictor, SpeakerEncoder, SpeechEncoder, SystemBundle,
    SystemLabel,
};
use crate::nn::{Graph, ModelParams, ModuleTag, Optimizer, Var};
use crate::training::config::AsaStageConfig;
use crate::training::report::{ReportSink, StepRecord};
use crate::training::stages::init_seed;
use crate::training::trainer::sample_batch;
use crate::training::PreparedUtterance;

pub const STAGE: &str = "adapt-asa";

/// Modules that adaptation must leave bit-identical.
pub const FROZEN: [ModuleTag; 4] =
    [ModuleTag::SpeechEncoder, ModuleTag::DurationPredictor, ModuleTag::PitchPredictor, ModuleTag::Generator];

/// Copy of a baseline system relabelled for adaptation; the discriminator
/// slot starts empty.
pub fn clone_system(sv: &SystemBundle) -> Result<SystemBundle> {
    sv.validate()?;
    if sv.label != SystemLabel::SvDsr {
        return Err(DsrError::Config(format!("adaptation starts from an SV-DSR system, got {}", sv.label)));
    }
    let mut asa = sv.clone();
    asa.label = SystemLabel::AsaDsr;
    asa.discriminator = None;
    Ok(asa)
}

/// One adaptation utterance with every frozen-model quantity precomputed.
#[derive(Clone, Debug)]
pub struct AdaptationSample {
    pub id: String,
    /// Normalised 80-band target mel.
    pub target: Array2<f64>,
    /// Normalised 40-band mel for the speaker encoder.
    pub mel40: Array2<f64>,
    /// Embeddings expanded by the aligned durations.
    pub p: ExpandedEmbedding,
    /// The utterance's own interpolated log-F0.
    pub v: Vec<f64>,
    /// Embeddings expanded by predicted durations.
    pub p_tilde: ExpandedEmbedding,
    pub v_tilde: Vec<f64>,
    /// Baseline output for `(p̃, ṽ)` with the baseline speaker embedding.
    pub z_sv: Array2<f64>,
}

/// Builds the adaptation set for one dysarthric speaker from the baseline.
pub fn prepare_adaptation_set(sv: &SystemBundle, utts: &[&PreparedUtterance]) -> Result<Vec<AdaptationSample>> {
    sv.validate()?;
    let first = utts.first().ok_or_else(|| DsrError::Empty("no adaptation utterances".into()))?;
    if let Some(u) = utts.iter().find(|u| u.entry.speaker != first.entry.speaker) {
        return Err(DsrError::Corpus(format!(
            "adaptation data mixes speakers `{}` and `{}`",
            first.entry.speaker, u.entry.speaker
        )));
    }
    let cfg = &sv.config;
    let se = SpeechEncoder::new(cfg);
    let dp = DurationPredictor::new(cfg);
    let pp = PitchPredictor::new(cfg);
    let spk = SpeakerEncoder::new(cfg);
    let gen = Generator::new(cfg);
    utts.iter()
        .map(|u| {
            let pe = se.forced_posteriors(sv.get(ModuleTag::SpeechEncoder)?, &u.feat, &u.alignment.phonemes())?.rows;
            let p = expand_by_duration(&pe, &u.alignment.durations())?;
            let d_tilde = dp.predict(sv.get(ModuleTag::DurationPredictor)?, &pe)?;
            let p_tilde = expand_by_duration(&pe, &d_tilde)?;
            let v_tilde = pp.predict(sv.get(ModuleTag::PitchPredictor)?, &p_tilde.rows)?;
            let e_sv = spk.embed(sv.get(ModuleTag::SpeakerEncoder)?, &u.mel40)?;
            let z_sv = gen.generate(sv.get(ModuleTag::Generator)?, &p_tilde, &v_tilde, &e_sv)?;
            Ok(AdaptationSample {
                id: u.entry.id.clone(),
                target: u.mel80.clone(),
                mel40: u.mel40.clone(),
                v: u.log_f0.clone(),
                p,
                p_tilde,
                v_tilde,
                z_sv,
            })
        })
        .collect()
}

/// How the speaker-encoder gradient is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Differentiate `L_adapt − λ·L_dis` directly.
    Explicit,
    /// Differentiate `L_adapt + λ·L_dis` with a gradient-reversal layer in
    /// front of the discriminator.
    Reversal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AsaLosses {
    pub adapt: f64,
    pub dis: f64,
    pub mtl: f64,
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

/// Outputs of the two systems for one sample: `(z̃_sv, z̃_asa, z_asa)`.
pub fn forward_triple(
    cfg: &ModelConfig,
    generator: &ModelParams,
    speaker: &ModelParams,
    s: &AdaptationSample,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let gen = Generator::new(cfg);
    let e = SpeakerEncoder::new(cfg).embed(speaker, &s.mel40)?;
    let z_tilde = gen.generate(generator, &s.p_tilde, &s.v_tilde, &e)?;
    let z = gen.generate(generator, &s.p, &s.v, &e)?;
    Ok((s.z_sv.clone(), z_tilde, z))
}

struct TripleVars {
    adapt: Var,
    p_sv: Var,
    p_asa: Var,
}

#[allow(clippy::too_many_arguments)]
fn build(
    g: &mut Graph,
    cfg: &ModelConfig,
    generator: &ModelParams,
    disc: &ModelParams,
    speaker: &ModelParams,
    s: &AdaptationSample,
    offset: usize,
    train_speaker: bool,
    train_disc: bool,
    reverse: bool,
) -> (crate::nn::Bound, crate::nn::Bound, TripleVars) {
    let gen = Generator::new(cfg);
    let d = Discriminator::new(cfg);
    let spk = SpeakerEncoder::new(cfg);
    let bs = speaker.bind(g, train_speaker);
    let bg = generator.bind(g, false);
    let bd = disc.bind(g, train_disc);
    let m40 = g.constant(s.mel40.clone());
    let e = spk.embed_var(g, &bs, m40);
    let (pt, vt) = (g.constant(s.p_tilde.rows.clone()), g.constant(column(&s.v_tilde)));
    let z_tilde = gen.forward(g, &bg, pt, vt, e);
    let (p, v) = (g.constant(s.p.rows.clone()), g.constant(column(&s.v)));
    let z = gen.forward(g, &bg, p, v, e);
    let m = g.constant(s.target.clone());
    let adapt = generation_loss(g, z, m);
    let z_tilde = if reverse { g.grl(z_tilde) } else { z_tilde };
    let p_asa = d.score_var(g, &bd, z_tilde, offset);
    let zsv = g.constant(s.z_sv.clone());
    let p_sv = d.score_var(g, &bd, zsv, offset);
    (bs, bd, TripleVars { adapt, p_sv, p_asa })
}

/// Losses and speaker-encoder gradient for one sample with the
/// discriminator held fixed.
pub fn speaker_gradients(
    cfg: &ModelConfig,
    generator: &ModelParams,
    disc: &ModelParams,
    speaker: &ModelParams,
    s: &AdaptationSample,
    offset: usize,
    lambda: f64,
    mode: GradMode,
) -> Result<(AsaLosses, Vec<Array2<f64>>)> {
    let mut g = Graph::new();
    let reverse = mode == GradMode::Reversal;
    let (bs, bd, t) = build(&mut g, cfg, generator, disc, speaker, s, offset, true, false, reverse);
    let dis = discrimination_loss(&mut g, t.p_sv, t.p_asa);
    let mtl = mtl_loss_var(&mut g, t.adapt, dis, lambda);
    let objective = match mode {
        GradMode::Explicit => mtl,
        GradMode::Reversal => {
            let w = g.scale(dis, lambda);
            g.add(t.adapt, w)
        }
    };
    let losses = AsaLosses { adapt: g.scalar_value(t.adapt), dis: g.scalar_value(dis), mtl: g.scalar_value(mtl) };
    let grads = g.backward(objective);
    if !bd.untouched(&grads) {
        return Err(DsrError::FrozenViolation("discriminator received a gradient in the speaker update".into()));
    }
    Ok((losses, bs.grads(&grads)))
}

/// `L_dis` and its discriminator gradient for one sample with the speaker
/// encoder held fixed.
pub fn discriminator_gradients(
    cfg: &ModelConfig,
    generator: &ModelParams,
    disc: &ModelParams,
    speaker: &ModelParams,
    s: &AdaptationSample,
    offset: usize,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let mut g = Graph::new();
    let (bs, bd, t) = build(&mut g, cfg, generator, disc, speaker, s, offset, false, true, false);
    let dis = discrimination_loss(&mut g, t.p_sv, t.p_asa);
    let value = g.scalar_value(dis);
    let grads = g.backward(dis);
    if !bs.untouched(&grads) {
        return Err(DsrError::FrozenViolation("speaker encoder received a gradient in the discriminator update".into()));
    }
    Ok((value, bd.grads(&grads)))
}

/// Gradient of the baseline term `log(1 − f_d(z̃_sv))` with respect to the
/// adapted speaker encoder. `None` when no path connects them.
pub fn baseline_term_gradient(
    cfg: &ModelConfig,
    generator: &ModelParams,
    disc: &ModelParams,
    speaker: &ModelParams,
    s: &AdaptationSample,
    offset: usize,
) -> Option<Vec<Array2<f64>>> {
    let mut g = Graph::new();
    let (bs, _, t) = build(&mut g, cfg, generator, disc, speaker, s, offset, true, false, false);
    let one_minus = g.neg(t.p_sv);
    let one_minus = g.shift(one_minus, 1.0);
    let term = g.log(one_minus);
    let grads = g.backward(term);
    if bs.untouched(&grads) {
        None
    } else {
        Some(bs.grads(&grads))
    }
}

fn mean_grads(sum: &mut [Array2<f64>], add: &[Array2<f64>]) {
    for (a, b) in sum.iter_mut().zip(add) {
        *a += b;
    }
}

fn zeros_like(p: &ModelParams) -> Vec<Array2<f64>> {
    p.iter().map(|(_, t)| Array2::zeros(t.dim())).collect()
}

/// Adaptation state: the frozen baseline, the adapted speaker encoder and
/// the discriminator with their optimisers.
pub struct AsaTrainer {
    pub config: AsaStageConfig,
    pub seed: u64,
    pub mode: GradMode,
    pub baseline: SystemBundle,
    pub speaker: ModelParams,
    pub discriminator: ModelParams,
    pub speaker_opt: Optimizer,
    pub disc_opt: Optimizer,
    pub step: u64,
    frozen: Vec<(ModuleTag, String)>,
}

impl AsaTrainer {
    pub fn new(sv: &SystemBundle, config: AsaStageConfig, seed: u64) -> Result<Self> {
        let asa = clone_system(sv)?;
        let speaker = asa.get(ModuleTag::SpeakerEncoder)?.clone();
        let discriminator = Discriminator::new(&sv.config).init(init_seed(seed, "discriminator"));
        let st = &config.stage;
        let speaker_opt = Optimizer::new(st.optimizer, st.lr, &speaker);
        let disc_opt = Optimizer::new(st.optimizer, st.lr, &discriminator);
        Ok(Self {
            frozen: frozen_checksums(sv)?,
            config,
            seed,
            mode: GradMode::Explicit,
            baseline: sv.clone(),
            speaker,
            discriminator,
            speaker_opt,
            disc_opt,
            step: 0,
        })
    }

    pub fn resume(sv: &SystemBundle, config: AsaStageConfig, seed: u64, ck: TrainingCheckpoint) -> Result<Self> {
        if ck.stage != STAGE || ck.params.len() != 2 {
            return Err(DsrError::MalformedCheckpoint(format!("`{}` is not an adaptation checkpoint", ck.stage)));
        }
        let mut t = Self::new(sv, config, seed)?;
        let mut params = ck.params.into_iter();
        let mut opts = ck.optimizers.into_iter();
        t.speaker = params.next().expect("two sets");
        t.discriminator = params.next().expect("two sets");
        t.speaker_opt = opts.next().expect("two sets");
        t.disc_opt = opts.next().expect("two sets");
        t.step = ck.step;
        Ok(t)
    }

    pub fn with_mode(mut self, mode: GradMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn checkpoint(&self) -> TrainingCheckpoint {
        TrainingCheckpoint {
            stage: STAGE.to_string(),
            step: self.step,
            params: vec![self.speaker.clone(), self.discriminator.clone()],
            optimizers: vec![self.speaker_opt.clone(), self.disc_opt.clone()],
        }
    }

    fn cfg(&self) -> &ModelConfig {
        &self.baseline.config
    }

    fn generator(&self) -> &ModelParams {
        self.baseline.generator.as_ref().expect("validated bundle")
    }

    /// Baseline speaker encoder, which adaptation must not touch.
    pub fn baseline_speaker(&self) -> &ModelParams {
        self.baseline.speaker_encoder.as_ref().expect("validated bundle")
    }

    fn offset(&self, rng: &mut ChaCha8Rng, s: &AdaptationSample) -> usize {
        let max = Discriminator::new(self.cfg()).max_offset(s.p_tilde.frames());
        rng.gen_range(0..=max)
    }

    /// One alternating update: the discriminator first, then the speaker
    /// encoder against the updated discriminator.
    pub fn step(&mut self, set: &[AdaptationSample]) -> Result<AsaLosses> {
        if set.is_empty() {
            return Err(DsrError::Empty("empty adaptation set".into()));
        }
        let mut rng = derive_rng(self.seed, &format!("{STAGE}:{}", self.step));
        let batch = sample_batch(&mut rng, set.len(), self.config.stage.batch_size);
        let offsets: Vec<usize> = batch.iter().map(|&i| self.offset(&mut rng, &set[i])).collect();
        let n = batch.len() as f64;
        let clip = self.config.stage.clip;

        let mut gd = zeros_like(&self.discriminator);
        for (&i, &o) in batch.iter().zip(&offsets) {
            let (_, g) = discriminator_gradients(self.cfg(), self.generator(), &self.discriminator, &self.speaker, &set[i], o)?;
            mean_grads(&mut gd, &g);
        }
        gd.iter_mut().for_each(|t| *t /= n);
        if clip > 0.0 {
            crate::nn::clip_global_norm(&mut gd, clip);
        }
        self.disc_opt.step(&mut self.discriminator, &gd);

        let mut gs = zeros_like(&self.speaker);
        let mut total = AsaLosses::default();
        for (&i, &o) in batch.iter().zip(&offsets) {
            let (l, g) = speaker_gradients(
                self.cfg(),
                self.generator(),
                &self.discriminator,
                &self.speaker,
                &set[i],
                o,
                self.config.lambda,
                self.mode,
            )?;
            mean_grads(&mut gs, &g);
            total.adapt += l.adapt / n;
            total.dis += l.dis / n;
            total.mtl += l.mtl / n;
        }
        if !total.mtl.is_finite() {
            return Err(DsrError::Diverged { stage: STAGE.into(), step: self.step + 1 });
        }
        gs.iter_mut().for_each(|t| *t /= n);
        if clip > 0.0 {
            crate::nn::clip_global_norm(&mut gs, clip);
        }
        self.speaker_opt.step(&mut self.speaker, &gs);
        self.step += 1;
        self.verify_frozen()?;
        Ok(total)
    }

    /// Errors if any frozen module, or the baseline speaker encoder, changed.
    pub fn verify_frozen(&self) -> Result<()> {
        let now = frozen_checksums(&self.baseline)?;
        for ((tag, before), (_, after)) in self.frozen.iter().zip(&now) {
            if before != after {
                return Err(DsrError::FrozenViolation(format!("{} changed during adaptation", tag.as_str())));
            }
        }
        Ok(())
    }

    /// Runs until `until` total steps (capped at the configured count).
    pub fn run_until(&mut self, set: &[AdaptationSample], until: u64, sink: &mut dyn ReportSink) -> Result<Vec<AsaLosses>> {
        let until = until.min(self.config.stage.steps);
        let mut trace = Vec::new();
        while self.step < until {
            let l = self.step(set)?;
            let rec = StepRecord::new(STAGE, self.step, l.mtl, &[("l_adapt", l.adapt), ("l_dis", l.dis), ("l_mtl", l.mtl)]);
            sink.record(&rec)?;
            trace.push(l);
        }
        Ok(trace)
    }

    /// The adapted system: frozen modules, adapted speaker encoder and the
    /// trained discriminator.
    pub fn bundle(&self) -> Result<SystemBundle> {
        let mut asa = clone_system(&self.baseline)?;
        asa.set(self.speaker.clone());
        asa.set(self.discriminator.clone());
        asa.validate()?;
        Ok(asa)
    }
}

fn frozen_checksums(b: &SystemBundle) -> Result<Vec<(ModuleTag, String)>> {
    let mut out: Vec<(ModuleTag, String)> = FROZEN.iter().map(|&t| Ok((t, b.get(t)?.checksum()))).collect::<Result<_>>()?;
    out.push((ModuleTag::SpeakerEncoder, b.get(ModuleTag::SpeakerEncoder)?.checksum()));
    Ok(out)
}

/// Adapts `sv` to the speaker of `set` and returns the ASA system.
pub fn run_asa(
    sv: &SystemBundle,
    set: &[AdaptationSample],
    config: &AsaStageConfig,
    seed: u64,
    sink: &mut dyn ReportSink,
) -> Result<(SystemBundle, Vec<AsaLosses>)> {
    let mut t = AsaTrainer::new(sv, config.clone(), seed)?;
    let trace = t.run_until(set, config.stage.steps, sink)?;
    Ok((t.bundle()?, trace))
}

/// Checks an ASA system against the baseline it came from: every frozen
/// module must match bit for bit.
pub fn check_frozen_against(sv: &SystemBundle, asa: &SystemBundle) -> Result<()> {
    for tag in FROZEN {
        if sv.get(tag)?.checksum() != asa.get(tag)?.checksum() {
            return Err(DsrError::FrozenViolation(format!("{} differs from the baseline", tag.as_str())));
        }
    }
    Ok(())
}
