//! Python bindings for the reconstruction toolkit.
//!
//! ```python
//! import dsr_py
//! dsr_py.gen_corpus("corpus", seed=7)
//! p = dsr_py.Pipeline("corpus", "work", profile="smoke")
//! p.train_all()
//! p.adapt_asa("d00")
//! rows = p.evaluate("d00", mode="GG")
//! ```

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dsr_core::asa::GradMode;
use dsr_core::corpus::{load_bundle, synthesize_toy_corpus, Role, ToyCorpusConfig};
use dsr_core::eval::metrics::phoneme_error_rate as per;
use dsr_core::eval::{dysarthric_test, Evaluator};
use dsr_core::features::{append_deltas, extract_f0 as f0, mel_spectrogram as mel, FrameConfig, Waveform, SAMPLE_RATE};
use dsr_core::models::{discrimination_loss_value, generation_loss_value, mtl_loss as mtl};
use dsr_core::pipeline::Pipeline as CorePipeline;
use dsr_core::training::{reconstruct, Profile, ProsodyMode, RunConfig};
use dsr_core::DsrError;

fn py_err(e: DsrError) -> PyErr {
    match e {
        DsrError::Config(_) | DsrError::Shape(_) | DsrError::Empty(_) | DsrError::FrameConfig(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(r: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((r.len(), cols), r.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn waveform(samples: Vec<f64>) -> PyResult<Waveform> {
    Waveform::new(samples, SAMPLE_RATE).map_err(py_err)
}

fn frame_config(n_mels: usize) -> PyResult<FrameConfig> {
    let cfg = FrameConfig { n_mels, ..FrameConfig::default() };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Log-mel spectrogram of 16 kHz samples, one list per frame.
#[pyfunction]
#[pyo3(signature = (samples, n_mels=80))]
fn mel_spectrogram(samples: Vec<f64>, n_mels: usize) -> PyResult<Vec<Vec<f64>>> {
    let m = mel(&waveform(samples)?, &frame_config(n_mels)?).map_err(py_err)?;
    Ok(rows(&m.values))
}

/// 120-column encoder features: 40 log-mel bands with deltas and delta-deltas.
#[pyfunction]
fn encoder_features(samples: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let m = mel(&waveform(samples)?, &FrameConfig::mel40()).map_err(py_err)?;
    Ok(rows(&append_deltas(&m).map_err(py_err)?.values))
}

/// `(log_f0, voiced)` per frame; unvoiced frames carry 0.0.
#[pyfunction]
fn extract_f0(samples: Vec<f64>) -> PyResult<(Vec<f64>, Vec<bool>)> {
    let t = f0(&waveform(samples)?, &FrameConfig::mel80()).map_err(py_err)?;
    Ok((t.log_f0, t.voicing))
}

#[pyfunction]
fn phoneme_error_rate(hypothesis: Vec<usize>, reference: Vec<usize>) -> PyResult<f64> {
    per(&hypothesis, &reference).map_err(py_err)
}

/// Mean per-frame Euclidean distance between two equally shaped mels.
#[pyfunction]
fn generation_loss(z: Vec<Vec<f64>>, m: Vec<Vec<f64>>) -> PyResult<f64> {
    generation_loss_value(&from_rows(&z)?, &from_rows(&m)?).map_err(py_err)
}

#[pyfunction]
fn discrimination_loss(p_sv: f64, p_asa: f64) -> f64 {
    discrimination_loss_value(p_sv, p_asa)
}

#[pyfunction]
#[pyo3(signature = (adapt, dis, lam=1.0))]
fn mtl_loss(adapt: f64, dis: f64, lam: f64) -> f64 {
    mtl(adapt, dis, lam)
}

/// Writes the toy corpus and returns the number of utterances.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=1234, healthy=None, dysarthric=None, utterances=None, reference_utterances=None))]
fn gen_corpus(
    out_dir: PathBuf,
    seed: u64,
    healthy: Option<usize>,
    dysarthric: Option<usize>,
    utterances: Option<usize>,
    reference_utterances: Option<usize>,
) -> PyResult<usize> {
    let d = ToyCorpusConfig::default();
    let cfg = ToyCorpusConfig {
        seed,
        n_healthy_speakers: healthy.unwrap_or(d.n_healthy_speakers),
        n_dysarthric_speakers: dysarthric.unwrap_or(d.n_dysarthric_speakers),
        utterances_per_speaker: utterances.unwrap_or(d.utterances_per_speaker),
        reference_utterances: reference_utterances.unwrap_or(d.reference_utterances),
        ..d
    };
    Ok(synthesize_toy_corpus(&cfg, &out_dir).map_err(py_err)?.entries.len())
}

fn parse_mode(mode: &str) -> PyResult<ProsodyMode> {
    mode.parse().map_err(py_err)
}

/// File-backed training pipeline over one corpus and work directory.
#[pyclass]
struct Pipeline {
    inner: CorePipeline,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (corpus_dir, work_dir, profile="desk", seed=1234))]
    fn new(corpus_dir: PathBuf, work_dir: PathBuf, profile: &str, seed: u64) -> PyResult<Self> {
        let profile: Profile = profile.parse().map_err(py_err)?;
        let mut run = RunConfig::new(profile, seed);
        run.corpus_dir = corpus_dir;
        run.work_dir = work_dir;
        Ok(Self { inner: CorePipeline::open(run).map_err(py_err)? })
    }

    fn dysarthric_speakers(&self) -> Vec<String> {
        self.inner.corpus.manifest.speakers(Some(Role::Dysarthric))
    }

    /// Runs every baseline stage in order and returns the assembled speakers.
    #[pyo3(signature = (resume=false))]
    fn train_all(&self, py: Python<'_>, resume: bool) -> PyResult<Vec<String>> {
        py.allow_threads(|| {
            let p = &self.inner;
            p.pretrain_se(resume)?;
            for s in p.corpus.manifest.speakers(Some(Role::Dysarthric)) {
                p.finetune_se(&s, resume)?;
            }
            p.train_prosody(resume)?;
            p.train_speaker(resume)?;
            p.train_generator(resume)?;
            p.assemble_all()
        })
        .map_err(py_err)
    }

    /// Adapts the speaker encoder for `speaker`; returns the system path.
    #[pyo3(signature = (speaker, grl=false, resume=false))]
    fn adapt_asa(&self, py: Python<'_>, speaker: &str, grl: bool, resume: bool) -> PyResult<String> {
        let mode = if grl { GradMode::Reversal } else { GradMode::Explicit };
        py.allow_threads(|| self.inner.adapt_asa(speaker, mode, resume)).map_err(py_err)?;
        Ok(self.inner.ws.asa_bundle(speaker).display().to_string())
    }

    /// Normalised 80-band reconstruction of a corpus utterance.
    #[pyo3(signature = (system, utterance, mode="PP"))]
    fn reconstruct(&self, system: PathBuf, utterance: &str, mode: &str) -> PyResult<Vec<Vec<f64>>> {
        let bundle = load_bundle(&system).map_err(py_err)?;
        let u = self.inner.corpus.get(utterance).map_err(py_err)?;
        let r = reconstruct(&bundle, u.into(), parse_mode(mode)?).map_err(py_err)?;
        Ok(rows(&r.mel80))
    }

    /// Per-utterance metrics for raw speech, SV-DSR and (when present)
    /// ASA-DSR, as JSON strings.
    #[pyo3(signature = (speaker, mode="PP"))]
    fn evaluate(&self, py: Python<'_>, speaker: &str, mode: &str) -> PyResult<Vec<String>> {
        let mode = parse_mode(mode)?;
        let p = &self.inner;
        let report = py
            .allow_threads(|| {
                let sv = p.load_sv(speaker)?;
                let mut systems = vec![sv.clone()];
                let asa = p.ws.asa_bundle(speaker);
                if asa.exists() {
                    systems.push(load_bundle(&asa)?);
                }
                let ev = Evaluator::new(&p.corpus, &sv)?;
                ev.evaluate_set(&systems.iter().collect::<Vec<_>>(), &dysarthric_test(&p.corpus, Some(speaker)), mode)
            })
            .map_err(py_err)?;
        report
            .rows
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| PyRuntimeError::new_err(e.to_string())))
            .collect()
    }
}

#[pymodule]
fn dsr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mel_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(encoder_features, m)?)?;
    m.add_function(wrap_pyfunction!(extract_f0, m)?)?;
    m.add_function(wrap_pyfunction!(phoneme_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(generation_loss, m)?)?;
    m.add_function(wrap_pyfunction!(discrimination_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mtl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
