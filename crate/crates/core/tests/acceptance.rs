//! End-to-end acceptance checks, one report line per criterion.
//!
//! The desk-scale pipeline (criteria 4 to 7) takes roughly half an hour on a
//! single core. Set `DSR_ACCEPTANCE_WORK=<dir>` to keep and reuse its corpus
//! and stage outputs between runs.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsr_core::asa::{
    baseline_term_gradient, clone_system, discriminator_gradients, forward_triple, prepare_adaptation_set,
    speaker_gradients, AdaptationSample, AsaTrainer, GradMode,
};
use dsr_core::corpus::{
    load_bundle, save_bundle, synthesize_toy_corpus, Checkpoint, Manifest, Role, Split, ToyCorpusConfig,
    TrainingCheckpoint,
};
use dsr_core::eval::{dysarthric_test, Evaluator, UtteranceMetrics};
use dsr_core::features::{append_deltas, mel_spectrogram, FrameConfig, Waveform, SAMPLE_RATE};
use dsr_core::models::{
    discrimination_loss, discrimination_loss_value, expand_by_duration, generation_loss, generation_loss_value,
    mtl_loss, Discriminator, DurationPredictor, ExpandedEmbedding, Generator, ModelConfig, PitchPredictor,
    SpeakerEmbedding, SpeakerEncoder, SpeechEncoder, SystemBundle, SystemLabel,
};
use dsr_core::nn::gradcheck::check_params;
use dsr_core::nn::{Graph, ModelParams, ModuleTag};
use dsr_core::pipeline::Pipeline;
use dsr_core::training::report::read_jsonl;
use dsr_core::training::{reconstruct, MemorySink, Profile, ProsodyMode, RunConfig};

const SEED: u64 = 1234;
const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;

type Outcome = Result<String, String>;

fn report(line: &str) {
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance.txt");
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "{line}");
    }
}

fn run(n: u8, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = t.elapsed().as_secs_f64();
    match &outcome {
        Ok(detail) => report(&format!("criterion {n} PASS [{secs:.0}s] {name}: {detail}")),
        Err(detail) => report(&format!("criterion {n} FAIL [{secs:.0}s] {name}: {detail}")),
    }
    outcome.is_ok()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn simplex(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ExpandedEmbedding {
    let r = random(rows, cols, rng).mapv(f64::exp);
    let s = r.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    ExpandedEmbedding { rows: &r / &s }
}

// ---------------------------------------------------------------- 1

fn grl_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for trial in 0..20 {
        let (r, c) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let scale = 10f64.powi(rng.gen_range(-6..6));
        let x = random(r, c, &mut rng) * scale;
        let upstream = random(r, c, &mut rng) * 10f64.powi(rng.gen_range(-6..6));
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = g.grl(xv);
        ensure(g.value(y) == &x, || format!("trial {trial}: forward differs from input"))?;
        let u = g.constant(upstream.clone());
        let prod = g.mul(y, u);
        let loss = g.sum(prod);
        let grads = g.backward(loss);
        let dx = grads.get(xv).ok_or("no gradient reached the input")?;
        ensure(dx == &upstream.mapv(|v| -v), || format!("trial {trial}: gradient is not the negated upstream"))?;
    }
    Ok("20 random tensors, forward identity and reversed gradient bit-exact".into())
}

// ---------------------------------------------------------------- 2

fn loss_oracles() -> Outcome {
    let dis = discrimination_loss_value(0.9, 0.1);
    ensure((dis - (-4.60517)).abs() < 1e-5 && (dis - 2.0 * 0.1f64.ln()).abs() < 1e-12, || format!("L_dis = {dis}"))?;
    let mtl = mtl_loss(2.0, -1.38629, 1.0);
    ensure((mtl - 3.38629).abs() < 1e-6, || format!("L_mtl = {mtl}"))?;
    let z = Array2::<f64>::zeros((1, 80));
    let mut m = Array2::<f64>::zeros((1, 80));
    m[[0, 0]] = 3.0;
    m[[0, 1]] = 4.0;
    let gen = generation_loss_value(&z, &m).map_err(|e| e.to_string())?;
    ensure((gen - 5.0).abs() < 1e-9, || format!("L_gen = {gen}"))?;
    let mut g = Graph::new();
    let (zv, mv) = (g.leaf(z), g.constant(m));
    let l = generation_loss(&mut g, zv, mv);
    ensure((g.scalar_value(l) - 5.0).abs() < 1e-9, || "graph loss differs from the value form".into())?;
    Ok(format!("L_dis {dis:.6}, L_mtl {mtl:.6}, L_gen {gen:.9}"))
}

// ---------------------------------------------------------------- 3

fn tiny_bundle(cfg: &ModelConfig) -> SystemBundle {
    let mut b = SystemBundle::empty(SystemLabel::SvDsr, cfg.clone());
    b.set(SpeechEncoder::new(cfg).init(1));
    b.set(DurationPredictor::new(cfg).init(2, 1.5));
    b.set(PitchPredictor::new(cfg).init(3, 5.0));
    b.set(SpeakerEncoder::new(cfg).init(4));
    b.set(Generator::new(cfg).init(5));
    b
}

fn tiny_sample(b: &SystemBundle, rng: &mut ChaCha8Rng) -> AdaptationSample {
    let cfg = &b.config;
    let (t, tt) = (14, 20);
    let p_tilde = simplex(tt, cfg.n_phonemes, rng);
    let v_tilde: Vec<f64> = (0..tt).map(|i| 5.0 + 0.02 * i as f64).collect();
    let mel40 = random(t, 40, rng);
    let e = SpeakerEncoder::new(cfg).embed(b.get(ModuleTag::SpeakerEncoder).unwrap(), &mel40).unwrap();
    let z_sv = Generator::new(cfg).generate(b.get(ModuleTag::Generator).unwrap(), &p_tilde, &v_tilde, &e).unwrap();
    AdaptationSample {
        id: "tiny".into(),
        target: random(t, 80, rng),
        mel40,
        p: simplex(t, cfg.n_phonemes, rng),
        v: (0..t).map(|i| 5.1 - 0.01 * i as f64).collect(),
        p_tilde,
        v_tilde,
        z_sv,
    }
}

fn gradcheck<F>(name: &str, p: &ModelParams, loss: F, log: &mut Vec<String>) -> Result<(), String>
where
    F: Fn(&ModelParams, bool) -> (f64, Option<Vec<Array2<f64>>>),
{
    let analytic = loss(p, true).1.ok_or_else(|| format!("{name}: no analytic gradient"))?;
    let r = check_params(p, &analytic, H, 40, |q| loss(q, false).0);
    let err = r.max_rel_error();
    log.push(format!("{name} {err:.1e}"));
    ensure(err < GRAD_TOL, || format!("{name}: relative error {err:.3e} at {:?}", r.worst()))
}

/// Value and (when `grad`) parameter gradient of a graph-built loss.
fn graph_loss(
    p: &ModelParams,
    grad: bool,
    build: impl FnOnce(&mut Graph, &dsr_core::nn::Bound) -> dsr_core::nn::Var,
) -> (f64, Option<Vec<Array2<f64>>>) {
    let mut g = Graph::new();
    let b = p.bind(&mut g, grad);
    let l = build(&mut g, &b);
    let v = g.scalar_value(l);
    (v, grad.then(|| b.grads(&g.backward(l))))
}

fn gradient_correctness() -> Outcome {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut log = Vec::new();

    let gen = Generator::new(&cfg);
    let x = simplex(7, cfg.n_phonemes, &mut rng);
    let f0: Vec<f64> = (0..7).map(|t| 4.9 + 0.04 * t as f64).collect();
    let ev = random(1, cfg.embed_dim, &mut rng);
    let norm = ev.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e = SpeakerEmbedding { vector: ev.iter().map(|v| v / norm).collect() };
    let target = random(7, 80, &mut rng);
    gradcheck("generation", &gen.init(3), |q, grad| {
        graph_loss(q, grad, |g, b| {
            let (xv, fv, evar) = gen.input_vars(g, &x, &f0, &e).unwrap();
            let y = gen.forward(g, b, xv, fv, evar);
            let t = g.constant(target.clone());
            generation_loss(g, y, t)
        })
    }, &mut log)?;

    let spk = SpeakerEncoder::new(&cfg);
    let crops: Vec<Array2<f64>> = (0..6).map(|_| random(5, 40, &mut rng)).collect();
    gradcheck("ge2e", &spk.init(9), |q, grad| graph_loss(q, grad, |g, b| spk.ge2e_batch_loss(g, b, &crops, 3, 2).unwrap()), &mut log)?;

    let se = SpeechEncoder::new(&cfg);
    let feat = random(9, 120, &mut rng);
    let labels = [0, 2, 3, 1];
    gradcheck("speech-encoder", &se.init(11), |q, grad| graph_loss(q, grad, |g, b| se.loss(g, b, &feat, &labels).unwrap()), &mut log)?;

    let pe = simplex(6, cfg.n_phonemes, &mut rng).rows;
    let durs = [3, 1, 7, 2, 4, 9];
    let dp = DurationPredictor::new(&cfg);
    gradcheck("duration", &dp.init(5, 1.0), |q, grad| graph_loss(q, grad, |g, b| dp.loss(g, b, &pe, &durs).unwrap()), &mut log)?;
    let pp = PitchPredictor::new(&cfg);
    let lf0: Vec<f64> = (0..6).map(|i| 5.0 + 0.1 * i as f64).collect();
    gradcheck("pitch", &pp.init(6, 5.0), |q, grad| graph_loss(q, grad, |g, b| pp.loss(g, b, &pe, &lf0).unwrap()), &mut log)?;

    let d = Discriminator::new(&cfg);
    let (a, bm) = (random(20, 80, &mut rng), random(17, 80, &mut rng));
    gradcheck("discrimination", &d.init(7), |q, grad| {
        graph_loss(q, grad, |g, b| {
            let (av, bv) = (g.constant(a.clone()), g.constant(bm.clone()));
            let ps = d.score_var(g, b, av, 2);
            let pa = d.score_var(g, b, bv, 1);
            discrimination_loss(g, ps, pa)
        })
    }, &mut log)?;

    let bundle = tiny_bundle(&cfg);
    let s = tiny_sample(&bundle, &mut rng);
    let gp = bundle.get(ModuleTag::Generator).unwrap();
    let sp = bundle.get(ModuleTag::SpeakerEncoder).unwrap();
    let disc = d.init(8);
    gradcheck("dis-wrt-phi", &disc, |q, grad| {
        let (v, gr) = discriminator_gradients(&cfg, gp, q, sp, &s, 1).unwrap();
        (v, grad.then_some(gr))
    }, &mut log)?;
    for (name, mode, lambda) in
        [("mtl-explicit", GradMode::Explicit, 0.7), ("mtl-reversal", GradMode::Reversal, 0.7), ("adapt", GradMode::Explicit, 0.0)]
    {
        gradcheck(name, sp, |q, grad| {
            let (l, gr) = speaker_gradients(&cfg, gp, &disc, q, &s, 2, lambda, mode).unwrap();
            (l.mtl, grad.then_some(gr))
        }, &mut log)?;
    }
    Ok(format!("max relative error per loss: {}", log.join(", ")))
}

// ---------------------------------------------------------------- 8

fn feature_layer() -> Outcome {
    let samples: Vec<f64> = (0..SAMPLE_RATE as usize).map(|i| 0.3 * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / 16000.0).sin()).collect();
    let wav = Waveform::new(samples, SAMPLE_RATE).map_err(|e| e.to_string())?;
    let mel80 = mel_spectrogram(&wav, &FrameConfig::mel80()).map_err(|e| e.to_string())?;
    ensure(mel80.frames() == 98, || format!("{} frames", mel80.frames()))?;
    ensure(FrameConfig::mel80().frame_count(16000).ok() == Some(98), || "frame_count".into())?;
    let mel40 = mel_spectrogram(&wav, &FrameConfig::mel40()).map_err(|e| e.to_string())?;
    let feat = append_deltas(&mel40).map_err(|e| e.to_string())?;
    ensure(feat.values.dim() == (98, 120), || format!("feature matrix {:?}", feat.values.dim()))?;

    let cfg = ModelConfig::tiny();
    let enc = SpeakerEncoder::new(&cfg);
    let p = enc.init(2);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let mut worst = 0.0f64;
    for i in 0..10 {
        let m = random(5 + 7 * i, 40, &mut rng) * (1.0 + i as f64);
        let e = enc.embed(&p, &m).map_err(|e| e.to_string())?;
        let n = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((n - 1.0).abs());
    }
    ensure(worst < 1e-6, || format!("embedding norm off by {worst:e}"))?;

    for trial in 0..10 {
        let n = rng.gen_range(1..12);
        let pe = simplex(n, 6, &mut rng).rows;
        let durs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..9)).collect();
        let x = expand_by_duration(&pe, &durs).map_err(|e| e.to_string())?;
        let total: usize = durs.iter().sum();
        ensure(x.frames() == total, || format!("trial {trial}: {} frames for duration sum {total}", x.frames()))?;
    }
    Ok(format!("98 frames, 98x120 features, max |norm - 1| {worst:.1e}, expansion lengths exact"))
}

// ---------------------------------------------------------------- 9

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn smoke_corpus() -> ToyCorpusConfig {
    ToyCorpusConfig {
        seed: 7,
        n_healthy_speakers: 4,
        n_dysarthric_speakers: 1,
        utterances_per_speaker: 8,
        reference_utterances: 8,
        ..ToyCorpusConfig::default()
    }
}

fn smoke_run(corpus: &Path, work: &Path) -> dsr_core::Result<Pipeline> {
    let mut run = RunConfig::new(Profile::Smoke, 11);
    run.corpus_dir = corpus.to_path_buf();
    run.work_dir = work.to_path_buf();
    let p = Pipeline::open(run)?;
    p.pretrain_se(false)?;
    for s in p.corpus.manifest.speakers(Some(Role::Dysarthric)) {
        p.finetune_se(&s, false)?;
    }
    p.train_prosody(false)?;
    p.train_speaker(false)?;
    p.train_generator(false)?;
    for s in p.corpus.manifest.speakers(Some(Role::Dysarthric)) {
        p.adapt_asa(&s, GradMode::Explicit, false)?;
    }
    Ok(p)
}

type Trace = Vec<(String, u64, f64, BTreeMap<String, f64>)>;

fn traces(work: &Path) -> BTreeMap<String, Trace> {
    std::fs::read_dir(work.join("logs"))
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let recs = read_jsonl(&path).unwrap();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, recs.into_iter().map(|r| (r.stage, r.step, r.loss, r.extra)).collect())
        })
        .collect()
}

fn persistence() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ca, cb) = (tmp.path().join("corpus_a"), tmp.path().join("corpus_b"));
    let manifest = synthesize_toy_corpus(&smoke_corpus(), &ca).map_err(|e| e.to_string())?;
    synthesize_toy_corpus(&smoke_corpus(), &cb).map_err(|e| e.to_string())?;
    let (fa, fb) = (files_under(&ca), files_under(&cb));
    ensure(fa == fb, || "seeded corpus regeneration differs".into())?;
    let reloaded = Manifest::load(&manifest.path()).map_err(|e| e.to_string())?;
    ensure(
        reloaded.to_jsonl().unwrap() == manifest.to_jsonl().unwrap()
            && reloaded.to_jsonl().unwrap().as_bytes() == std::fs::read(manifest.path()).unwrap().as_slice(),
        || "manifest round trip differs".into(),
    )?;

    let (wa, wb) = (tmp.path().join("work_a"), tmp.path().join("work_b"));
    let pa = smoke_run(&ca, &wa).map_err(|e| e.to_string())?;
    smoke_run(&ca, &wb).map_err(|e| e.to_string())?;
    let (ta, tb) = (traces(&wa), traces(&wb));
    ensure(ta.len() >= 6, || format!("only {} stage logs", ta.len()))?;
    for (name, trace) in &ta {
        ensure(tb.get(name) == Some(trace), || format!("{name}: rerun trace differs"))?;
        ensure(!trace.is_empty(), || format!("{name}: empty trace"))?;
    }

    let spk = &pa.corpus.manifest.speakers(Some(Role::Dysarthric))[0];
    let mut checked = 0;
    for path in [pa.ws.sv_bundle(spk), pa.ws.asa_bundle(spk)] {
        let other = wb.join(path.strip_prefix(&wa).unwrap());
        ensure(std::fs::read(&path).unwrap() == std::fs::read(&other).unwrap(), || format!("{} differs across reruns", path.display()))?;
        let bundle = load_bundle(&path).map_err(|e| e.to_string())?;
        let copy = tmp.path().join("copy.ckpt");
        save_bundle(&bundle, &copy).map_err(|e| e.to_string())?;
        ensure(std::fs::read(&copy).unwrap() == std::fs::read(&path).unwrap(), || "bundle save is not byte-stable".into())?;
        ensure(load_bundle(&copy).map_err(|e| e.to_string())? == bundle, || "bundle load differs".into())?;
        checked += 1;
    }
    for path in [pa.ws.generator(), pa.ws.asa_state(spk)] {
        let bytes = std::fs::read(&path).unwrap();
        let ck = Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
        ensure(ck.to_bytes() == bytes, || format!("{}: checkpoint bytes differ", path.display()))?;
        let tc = TrainingCheckpoint::load(&path).map_err(|e| e.to_string())?;
        let copy = tmp.path().join("state.ckpt");
        tc.save(&copy).map_err(|e| e.to_string())?;
        ensure(TrainingCheckpoint::load(&copy).map_err(|e| e.to_string())? == tc, || "training checkpoint differs".into())?;
        ensure(std::fs::read(&copy).unwrap() == bytes, || "training checkpoint bytes differ".into())?;
        checked += 1;
    }
    Ok(format!(
        "{} corpus files identical, {} stage traces identical across reruns, {checked} checkpoints round-trip bit-exact",
        fa.len(),
        ta.len()
    ))
}

// ---------------------------------------------------------------- desk pipeline

struct Desk {
    pipeline: Pipeline,
    speakers: Vec<String>,
}

fn desk() -> dsr_core::Result<Desk> {
    let keep = std::env::var_os("DSR_ACCEPTANCE_WORK").map(PathBuf::from);
    let root = keep.clone().unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    if keep.is_none() && root.exists() {
        std::fs::remove_dir_all(&root)?;
    }
    let corpus = root.join("corpus");
    if !corpus.join(dsr_core::corpus::MANIFEST_FILE).exists() {
        synthesize_toy_corpus(&ToyCorpusConfig { seed: SEED, ..ToyCorpusConfig::default() }, &corpus)?;
    }
    let mut run = RunConfig::new(Profile::Desk, SEED);
    run.corpus_dir = corpus;
    run.work_dir = root.join("work");
    let p = Pipeline::open(run)?;
    let speakers = p.corpus.manifest.speakers(Some(Role::Dysarthric));
    let t = Instant::now();
    if !p.ws.pretrained_se().exists() {
        p.pretrain_se(false)?;
    }
    for s in &speakers {
        if !p.ws.finetuned_se(s).exists() {
            p.finetune_se(s, false)?;
        }
    }
    if !p.ws.prosody().exists() {
        p.train_prosody(false)?;
    }
    if !p.ws.speaker_encoder().exists() {
        p.train_speaker(false)?;
    }
    if !p.ws.generator().exists() {
        p.train_generator(false)?;
    }
    report(&format!("desk baseline ready in {:.0}s", t.elapsed().as_secs_f64()));
    Ok(Desk { pipeline: p, speakers })
}

fn adaptation_set(p: &Pipeline, sv: &SystemBundle, speaker: &str) -> Vec<AdaptationSample> {
    let utts = p.corpus.select(Some(Role::Dysarthric), Some(speaker), Some(Split::Train));
    prepare_adaptation_set(sv, &utts).unwrap()
}

// ---------------------------------------------------------------- 4

fn freezing(d: &Desk) -> Outcome {
    let p = &d.pipeline;
    let spk = &d.speakers[0];
    let sv = p.load_sv(spk).map_err(|e| e.to_string())?;
    let set = adaptation_set(p, &sv, spk);
    let mut cfg = p.run.training.asa.clone();
    cfg.stage.steps = 100;
    let mut t = AsaTrainer::new(&sv, cfg, SEED).map_err(|e| e.to_string())?;
    let frozen = |b: &SystemBundle| -> Vec<String> {
        [ModuleTag::SpeechEncoder, ModuleTag::DurationPredictor, ModuleTag::PitchPredictor, ModuleTag::Generator, ModuleTag::SpeakerEncoder]
            .iter()
            .map(|&tag| b.get(tag).unwrap().checksum())
            .collect()
    };
    let start = frozen(&sv);
    let (spk0, disc0) = (t.speaker.checksum(), t.discriminator.checksum());
    ensure(frozen(&t.baseline) == start, || "checksums differ at start".into())?;
    let mut sink = MemorySink::default();
    let mut checks = 1;
    while t.step < 100 {
        t.run_until(&set, t.step + 10, &mut sink).map_err(|e| e.to_string())?;
        t.verify_frozen().map_err(|e| e.to_string())?;
        ensure(frozen(&t.baseline) == start, || format!("frozen checksum changed by step {}", t.step))?;
        checks += 1;
    }
    let asa = t.bundle().map_err(|e| e.to_string())?;
    let end: Vec<String> = frozen(&asa)[..4].to_vec();
    ensure(end == start[..4], || "ASA bundle carries modified frozen modules".into())?;
    ensure(t.speaker.checksum() != spk0, || "adapted speaker encoder did not change".into())?;
    ensure(t.discriminator.checksum() != disc0, || "discriminator did not change".into())?;
    ensure(sink.records.len() == 100, || format!("{} step records", sink.records.len()))?;
    Ok(format!("{spk}: 100 steps, 5 frozen checksums identical at {checks} checkpoints, speaker encoder and discriminator changed"))
}

// ---------------------------------------------------------------- 5

fn step_zero(d: &Desk) -> Outcome {
    let p = &d.pipeline;
    let mut n = 0;
    for spk in &d.speakers {
        let sv = p.load_sv(spk).map_err(|e| e.to_string())?;
        let asa = clone_system(&sv).map_err(|e| e.to_string())?;
        ensure(asa.label == SystemLabel::AsaDsr, || "clone kept the baseline label".into())?;
        for u in dysarthric_test(&p.corpus, Some(spk)).into_iter().take(5) {
            let a = reconstruct(&sv, u.into(), ProsodyMode::PP).map_err(|e| e.to_string())?;
            let b = reconstruct(&asa, u.into(), ProsodyMode::PP).map_err(|e| e.to_string())?;
            ensure(a.mel80 == b.mel80 && a.durations == b.durations, || format!("{}: reconstructions differ", u.id()))?;
            n += 1;
        }
    }
    ensure(n == 10, || format!("only {n} utterances"))?;
    Ok(format!("{n} held-out utterances reconstruct bit-identically"))
}

// ---------------------------------------------------------------- 6

fn structural_independence(d: &Desk) -> Outcome {
    let p = &d.pipeline;
    let spk = &d.speakers[0];
    let sv = p.load_sv(spk).map_err(|e| e.to_string())?;
    let set = adaptation_set(p, &sv, spk);
    let cfg = &sv.config;
    let gen = sv.get(ModuleTag::Generator).unwrap();
    let disc = Discriminator::new(cfg).init(SEED);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut spk_params = sv.get(ModuleTag::SpeakerEncoder).unwrap().clone();
    // perturb so the adapted encoder differs from the baseline one
    for t in spk_params.tensors_mut() {
        t.mapv_inplace(|v| v + rng.gen_range(-1e-3..1e-3));
    }
    let mut n = 0;
    for _ in 0..8 {
        let s = &set[rng.gen_range(0..set.len())];
        let max = Discriminator::new(cfg).max_offset(s.p_tilde.frames());
        let offset = rng.gen_range(0..=max);
        if let Some(g) = baseline_term_gradient(cfg, gen, &disc, &spk_params, s, offset) {
            let worst = g.iter().flat_map(|t| t.iter()).fold(0.0f64, |a, v| a.max(v.abs()));
            return Err(format!("{}: gradient reached the adapted encoder (max {worst:e})", s.id));
        }
        let (_, full) = speaker_gradients(cfg, gen, &disc, &spk_params, s, offset, 1.0, GradMode::Explicit).map_err(|e| e.to_string())?;
        ensure(full.iter().any(|t| t.iter().any(|v| *v != 0.0)), || "full objective has no speaker gradient".into())?;
        n += 1;
    }
    Ok(format!("{spk}: baseline discriminator term has no path to the adapted encoder on a seeded batch of {n}"))
}

// ---------------------------------------------------------------- 7

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn full_set_adapt(cfg: &ModelConfig, b: &SystemBundle, set: &[AdaptationSample]) -> f64 {
    let gen = b.get(ModuleTag::Generator).unwrap();
    let spk = b.get(ModuleTag::SpeakerEncoder).unwrap();
    mean(set.iter().map(|s| {
        let (_, _, z) = forward_triple(cfg, gen, spk, s).unwrap();
        generation_loss_value(&z, &s.target).unwrap()
    }))
}

fn reproduction(d: &Desk) -> Outcome {
    let p = &d.pipeline;
    let mut rows: Vec<UtteranceMetrics> = Vec::new();
    let mut adapt = Vec::new();
    for spk in &d.speakers {
        let sv = p.load_sv(spk).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let asa = if p.ws.asa_bundle(spk).exists() && std::env::var_os("DSR_ACCEPTANCE_WORK").is_some() {
            load_bundle(&p.ws.asa_bundle(spk)).map_err(|e| e.to_string())?
        } else {
            p.adapt_asa(spk, GradMode::Explicit, false).map_err(|e| e.to_string())?
        };
        report(&format!("adaptation for {spk} ready in {:.0}s", t.elapsed().as_secs_f64()));
        let set = adaptation_set(p, &sv, spk);
        let (before, after) = (full_set_adapt(&sv.config, &sv, &set), full_set_adapt(&sv.config, &asa, &set));
        let log = read_jsonl(&p.ws.log_path(&format!("adapt-asa_{spk}"))).map_err(|e| e.to_string())?;
        let k = 10.min(log.len());
        let head = mean(log[..k].iter().map(|r| r.component("l_adapt").unwrap()));
        let tail = mean(log[log.len() - k..].iter().map(|r| r.component("l_adapt").unwrap()));
        adapt.push((spk.clone(), before, after, head, tail));
        let ev = Evaluator::new(&p.corpus, &sv).map_err(|e| e.to_string())?;
        let rep = ev.evaluate_set(&[&sv, &asa], &dysarthric_test(&p.corpus, Some(spk)), ProsodyMode::PP).map_err(|e| e.to_string())?;
        let wr = rep.similarity_win_rate("ASA-DSR", "SV-DSR").map_err(|e| e.to_string())?;
        report(&format!("{spk} PP, ASA win rate {wr:.3}\n{}", rep.to_table()));
        rows.extend(rep.rows);
    }

    let of = |sys: &str| -> BTreeMap<String, &UtteranceMetrics> {
        rows.iter().filter(|r| r.system == sys).map(|r| (r.id.clone(), r)).collect()
    };
    let (raw, sv, asa) = (of("raw"), of("SV-DSR"), of("ASA-DSR"));
    ensure(!asa.is_empty() && asa.len() == sv.len(), || "missing system rows".into())?;
    let wins = asa.iter().filter(|(id, r)| r.speaker_similarity > sv[*id].speaker_similarity).count();
    let win_rate = wins as f64 / asa.len() as f64;
    let sim = |m: &BTreeMap<String, &UtteranceMetrics>| mean(m.values().map(|r| r.speaker_similarity));
    let per = |m: &BTreeMap<String, &UtteranceMetrics>| mean(m.values().map(|r| r.per));
    let (sim_sv, sim_asa) = (sim(&sv), sim(&asa));
    let (per_raw, per_sv, per_asa) = (per(&raw), per(&sv), per(&asa));
    let a = win_rate >= 0.7 && sim_asa > sim_sv;
    let b = (per_asa - per_sv).abs() <= 0.05 && per_sv < per_raw && per_asa < per_raw;
    let (before, after) = (mean(adapt.iter().map(|x| x.1)), mean(adapt.iter().map(|x| x.2)));
    let c = after < 0.5 * before;
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
    let per_spk: Vec<String> = adapt
        .iter()
        .map(|(s, b0, b1, h, t)| format!("{s} full-set {b0:.3}->{b1:.3} ({:.2}), log {h:.3}->{t:.3}", b1 / b0))
        .collect();
    report(&format!(
        "criterion 7 detail: (a) {}: win rate {win_rate:.3} over {} utterances, mean similarity ASA {sim_asa:.3} vs SV {sim_sv:.3}",
        mark(a),
        asa.len()
    ));
    report(&format!(
        "criterion 7 detail: (b) {}: PER raw {per_raw:.3}, SV {per_sv:.3}, ASA {per_asa:.3} (gap {:.3})",
        mark(b),
        (per_asa - per_sv).abs()
    ));
    report(&format!(
        "criterion 7 detail: (c) {}: L_adapt ratio {:.3}; {}",
        mark(c),
        after / before,
        per_spk.join("; ")
    ));
    let summary = format!("(a) {} (b) {} (c) {}", mark(a), mark(b), mark(c));
    if a && b && c {
        Ok(summary)
    } else {
        Err(summary)
    }
}

#[test]
fn acceptance() {
    let path = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance.txt");
    let _ = std::fs::remove_file(path);
    let mut failed = Vec::new();
    let mut check = |n: u8, name: &str, f: &dyn Fn() -> Outcome| {
        if !run(n, name, f) {
            failed.push(n);
        }
    };
    check(1, "gradient reversal exactness", &grl_exactness);
    check(2, "loss value oracles", &loss_oracles);
    check(3, "gradient correctness", &gradient_correctness);
    check(8, "feature layer", &feature_layer);
    check(9, "persistence and seeded reruns", &persistence);

    match desk() {
        Ok(d) => {
            check(4, "freezing invariant", &|| freezing(&d));
            check(5, "step-0 equivalence", &|| step_zero(&d));
            check(6, "structural independence", &|| structural_independence(&d));
            // directional toy-scale reproduction; reported, analysed separately
            if !run(7, "toy pipeline reproduction", || reproduction(&d)) {
                report("criterion 7 is reported without failing the suite");
            }
        }
        Err(e) => {
            for n in [4, 5, 6, 7] {
                report(&format!("criterion {n} FAIL: desk pipeline failed: {e}"));
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
