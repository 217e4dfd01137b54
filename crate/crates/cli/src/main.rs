use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dsr_core::asa::GradMode;
use dsr_core::corpus::{load_bundle, parse_f0_text, synthesize_toy_corpus, DysarthriaProfile, Role, ToyCorpusConfig};
use dsr_core::eval::{dysarthric_test, EvalReport, Evaluator};
use dsr_core::features::inversion::{mel_to_waveform, GL_ITERATIONS};
use dsr_core::features::{extract_f0, read_alignment, read_wav, write_wav, F0Track, FrameConfig};
use dsr_core::models::SystemBundle;
use dsr_core::pipeline::Pipeline;
use dsr_core::training::data::{analyze_wav, corpus_inventory};
use dsr_core::training::{reconstruct, Profile, ProsodyMode, ReconstructionInput, RunConfig, RunFile};
use dsr_core::{DsrError, Result};

#[derive(Parser, Debug)]
#[command(name = "dsr", version, about = "Dysarthric speech reconstruction with adversarial speaker adaptation")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hyper-parameter preset.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Corpus directory (holds manifest.jsonl).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Work directory for statistics, checkpoints and logs.
    #[arg(long, global = true)]
    work: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
    Smoke,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Smoke => Profile::Smoke,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    #[value(name = "GG", alias = "gg")]
    Gg,
    #[value(name = "GP", alias = "gp")]
    Gp,
    #[value(name = "PP", alias = "pp")]
    Pp,
}

impl From<ModeArg> for ProsodyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gg => ProsodyMode::GG,
            ModeArg::Gp => ProsodyMode::GP,
            ModeArg::Pp => ProsodyMode::PP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SystemArg {
    Sv,
    Asa,
    Both,
}

#[derive(Args, Debug)]
struct Resume {
    /// Continue from this stage's checkpoint if one exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the toy corpus.
    GenCorpus {
        #[arg(long)]
        healthy: Option<usize>,
        #[arg(long)]
        dysarthric: Option<usize>,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        reference_utterances: Option<usize>,
        #[arg(long)]
        tempo: Option<f64>,
        #[arg(long)]
        flatten: Option<f64>,
        #[arg(long)]
        substitution: Option<f64>,
    },
    /// Extract features and fix the normalisation statistics.
    Features,
    /// Pretrain the speech encoder on healthy speech.
    TrainSe(Resume),
    /// Fine-tune the speech encoder on one dysarthric speaker (all when omitted).
    FinetuneSe {
        #[arg(long)]
        speaker: Option<String>,
        #[command(flatten)]
        resume: Resume,
    },
    /// Train the duration and pitch predictors on the prosody reference.
    TrainProsody(Resume),
    /// Train the speaker encoder with the GE2E loss.
    TrainSpk(Resume),
    /// Train the mel generator.
    TrainGen(Resume),
    /// Adversarially adapt the speaker encoder to one dysarthric speaker.
    AdaptAsa {
        #[arg(long)]
        speaker: String,
        /// Use a gradient-reversal layer instead of the explicit objective.
        #[arg(long)]
        grl: bool,
        #[command(flatten)]
        resume: Resume,
    },
    /// Reconstruct one utterance with a trained system.
    Reconstruct {
        /// System checkpoint (sv_<spk>.ckpt or asa_<spk>.ckpt).
        #[arg(long)]
        system: PathBuf,
        /// Corpus utterance id.
        #[arg(long, conflicts_with = "wav", required_unless_present = "wav")]
        utterance: Option<String>,
        /// Arbitrary 16 kHz WAV file.
        #[arg(long)]
        wav: Option<PathBuf>,
        /// Alignment TSV for --wav input (needed for GG and GP).
        #[arg(long)]
        alignment: Option<PathBuf>,
        /// Pitch file for --wav input; extracted from the audio otherwise.
        #[arg(long)]
        f0: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "PP")]
        mode: ModeArg,
        /// Output WAV (Griffin-Lim).
        #[arg(long)]
        out: PathBuf,
        /// Also write the log-mel spectrogram as TSV.
        #[arg(long)]
        mel_out: Option<PathBuf>,
        #[arg(long, default_value_t = GL_ITERATIONS)]
        gl_iterations: usize,
    },
    /// Score systems on held-out dysarthric speech.
    Eval {
        #[arg(long)]
        speaker: Option<String>,
        #[arg(long, value_enum, default_value = "both")]
        system: SystemArg,
        #[arg(long, value_enum, default_value = "PP")]
        mode: ModeArg,
        /// Per-utterance JSONL output; defaults into the work directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let file = cli.config.as_deref().map(RunFile::load).transpose()?;
    let mut cfg = RunConfig::resolve(file.as_ref(), cli.profile.map(Into::into), cli.seed)?;
    if let Some(c) = &cli.corpus {
        cfg.corpus_dir = c.clone();
    }
    if let Some(w) = &cli.work {
        cfg.work_dir = w.clone();
    }
    Ok(cfg)
}

fn dysarthric_speakers(p: &Pipeline, only: Option<&str>) -> Result<Vec<String>> {
    let all = p.corpus.manifest.speakers(Some(Role::Dysarthric));
    match only {
        Some(s) if all.iter().any(|x| x == s) => Ok(vec![s.to_string()]),
        Some(s) => Err(DsrError::Corpus(format!("`{s}` is not a dysarthric speaker of this corpus"))),
        None => Ok(all),
    }
}

fn write_mel_tsv(path: &Path, mel: &ndarray::Array2<f64>) -> Result<()> {
    let text: String = mel
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join("\t") + "\n")
        .collect();
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = run_config(&cli)?;
    match cli.command {
        Command::GenCorpus { healthy, dysarthric, utterances, reference_utterances, tempo, flatten, substitution } => {
            let d = DysarthriaProfile::default();
            let base = ToyCorpusConfig::default();
            let toy = ToyCorpusConfig {
                n_healthy_speakers: healthy.unwrap_or(base.n_healthy_speakers),
                n_dysarthric_speakers: dysarthric.unwrap_or(base.n_dysarthric_speakers),
                utterances_per_speaker: utterances.unwrap_or(base.utterances_per_speaker),
                reference_utterances: reference_utterances.unwrap_or(base.reference_utterances),
                seed: cfg.seed,
                dysarthria: DysarthriaProfile {
                    tempo_factor: tempo.unwrap_or(d.tempo_factor),
                    pitch_flatten: flatten.unwrap_or(d.pitch_flatten),
                    substitution_rate: substitution.unwrap_or(d.substitution_rate),
                },
                ..base
            };
            let m = synthesize_toy_corpus(&toy, &cfg.corpus_dir)?;
            println!("wrote {} utterances to {}", m.entries.len(), cfg.corpus_dir.display());
        }
        Command::Features => {
            let p = Pipeline::open(cfg)?;
            let frames: usize = p.corpus.utterances.iter().map(|u| u.frames()).sum();
            println!(
                "{} utterances, {frames} frames; statistics in {}",
                p.corpus.utterances.len(),
                p.ws.path("stats").display()
            );
        }
        Command::TrainSe(r) => {
            let t = Pipeline::open(cfg)?.pretrain_se(r.resume)?;
            println!("speech encoder pretrained for {} steps", t.step);
        }
        Command::FinetuneSe { speaker, resume } => {
            let p = Pipeline::open(cfg)?;
            for s in dysarthric_speakers(&p, speaker.as_deref())? {
                let t = p.finetune_se(&s, resume.resume)?;
                println!("speech encoder fine-tuned on {s} for {} steps", t.step);
            }
        }
        Command::TrainProsody(r) => {
            let t = Pipeline::open(cfg)?.train_prosody(r.resume)?;
            println!("prosody predictors trained for {} steps", t.step);
        }
        Command::TrainSpk(r) => {
            let t = Pipeline::open(cfg)?.train_speaker(r.resume)?;
            println!("speaker encoder trained for {} steps", t.step);
        }
        Command::TrainGen(r) => {
            let p = Pipeline::open(cfg)?;
            let t = p.train_generator(r.resume)?;
            println!("generator trained for {} steps", t.step);
            let ready = p.assemble_all()?;
            if !ready.is_empty() {
                println!("SV-DSR systems ready for: {}", ready.join(", "));
            }
        }
        Command::AdaptAsa { speaker, grl, resume } => {
            let p = Pipeline::open(cfg)?;
            dysarthric_speakers(&p, Some(&speaker))?;
            let path = p.ws.sv_bundle(&speaker);
            if !path.exists() {
                return Err(DsrError::Config(format!(
                    "no SV-DSR system for {speaker} at {}; run the training stages first",
                    path.display()
                )));
            }
            let mode = if grl { GradMode::Reversal } else { GradMode::Explicit };
            p.adapt_asa(&speaker, mode, resume.resume)?;
            println!("ASA-DSR system written to {}", p.ws.asa_bundle(&speaker).display());
        }
        Command::Reconstruct { system, utterance, wav, alignment, f0, mode, out, mel_out, gl_iterations } => {
            let bundle = load_bundle(&system)?;
            let mode = ProsodyMode::from(mode);
            let p = Pipeline::open(cfg.clone())?;
            let r = match (utterance, wav) {
                (Some(id), _) => reconstruct(&bundle, p.corpus.get(&id)?.into(), mode)?,
                (None, Some(w)) => reconstruct_wav(&p, &bundle, &w, alignment.as_deref(), f0.as_deref(), mode)?,
                (None, None) => unreachable!("clap requires one input"),
            };
            let raw = p.corpus.stats.mel80.denormalize(&r.mel80)?;
            write_wav(&out, &mel_to_waveform(&raw, gl_iterations, cfg.seed)?)?;
            if let Some(m) = mel_out {
                write_mel_tsv(&m, &raw)?;
            }
            println!("{} frames ({mode}) written to {}", r.mel80.nrows(), out.display());
        }
        Command::Eval { speaker, system, mode, out } => {
            let p = Pipeline::open(cfg)?;
            let mode = ProsodyMode::from(mode);
            let mut report = EvalReport::default();
            for s in dysarthric_speakers(&p, speaker.as_deref())? {
                let sv = p.load_sv(&s)?;
                let mut systems: Vec<SystemBundle> = Vec::new();
                if system != SystemArg::Asa {
                    systems.push(sv.clone());
                }
                if system != SystemArg::Sv {
                    let path = p.ws.asa_bundle(&s);
                    if !path.exists() {
                        return Err(DsrError::MissingFile(path));
                    }
                    systems.push(load_bundle(&path)?);
                }
                let ev = Evaluator::new(&p.corpus, &sv)?;
                let refs: Vec<&SystemBundle> = systems.iter().collect();
                let part = ev.evaluate_set(&refs, &dysarthric_test(&p.corpus, Some(&s)), mode)?;
                report.rows.extend(part.rows);
            }
            print!("{}", report.to_table());
            if system == SystemArg::Both {
                if let Ok(w) = report.similarity_win_rate("ASA-DSR", "SV-DSR") {
                    println!("ASA-DSR more similar than SV-DSR on {:.1}% of utterances", 100.0 * w);
                }
            }
            let out = out.unwrap_or_else(|| p.ws.path(&format!("eval_{mode}.jsonl")));
            std::fs::write(&out, report.to_jsonl()?)?;
            println!("per-utterance records in {}", out.display());
        }
    }
    Ok(())
}

fn reconstruct_wav(
    p: &Pipeline,
    bundle: &SystemBundle,
    wav: &Path,
    alignment: Option<&Path>,
    f0: Option<&Path>,
    mode: ProsodyMode,
) -> Result<dsr_core::training::Reconstruction> {
    let raw = analyze_wav(wav)?;
    let stats = &p.corpus.stats;
    let feat = stats.feat.normalize(&raw.feat)?;
    let mel40 = stats.mel40.normalize(&raw.mel40)?;
    let frames = feat.nrows();
    let inv = corpus_inventory(&p.run.corpus_dir)?;
    let alignment = alignment.map(|a| read_alignment(a, &inv)).transpose()?;
    let track = match f0 {
        Some(path) => {
            let (log_f0, voicing) = parse_f0_text(&std::fs::read_to_string(path)?)?;
            F0Track { log_f0, voicing }
        }
        None => extract_f0(&read_wav(wav)?, &FrameConfig::mel80())?,
    };
    let log_f0 = track.truncated(frames).interpolated();
    let input = ReconstructionInput { feat: &feat, mel40: &mel40, alignment: alignment.as_ref(), log_f0: Some(&log_f0) };
    reconstruct(bundle, input, mode)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
