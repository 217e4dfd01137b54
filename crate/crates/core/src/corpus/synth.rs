//! Formant-synthesis toy corpus.
//!
//! Every phoneme is a pair of resonances excited by an impulse train
//! (voiced) or white noise (unvoiced). A speaker is a formant scale, a
//! spectral tilt and a base F0. Durations and pitch targets come from a
//! shared prosody model, so the prosody reference, the healthy speakers and
//! the dysarthric speakers differ only where the profile says they do.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{Manifest, ManifestEntry, Role, Split};
use crate::error::{DsrError, Result};
use crate::features::{write_wav, FrameConfig, PhonemeAlignment, Waveform, SAMPLE_RATE};
use crate::phoneme::PhonemeInventory;

/// Offset of the first phoneme boundary inside the sample stream; with it,
/// frame `t` (centred on sample `160t + 200`) lies inside its own phoneme.
const BOUNDARY_OFFSET: usize = 120;
const SILENCE_FRAMES: usize = 10;
const SILENCE_RMS: f64 = 0.002;
const SPEECH_RMS: f64 = 0.08;
const SUBSTITUTION_MIX: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DysarthriaProfile {
    pub tempo_factor: f64,
    pub pitch_flatten: f64,
    pub substitution_rate: f64,
}

impl Default for DysarthriaProfile {
    fn default() -> Self {
        Self { tempo_factor: 1.8, pitch_flatten: 0.6, substitution_rate: 0.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub n_healthy_speakers: usize,
    pub n_dysarthric_speakers: usize,
    pub utterances_per_speaker: usize,
    pub reference_utterances: usize,
    pub phoneme_inventory_size: usize,
    pub seed: u64,
    pub dysarthria: DysarthriaProfile,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_healthy_speakers: 8,
            n_dysarthric_speakers: 2,
            utterances_per_speaker: 40,
            reference_utterances: 80,
            phoneme_inventory_size: 12,
            seed: 1234,
            dysarthria: DysarthriaProfile::default(),
        }
    }
}

impl ToyCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.dysarthria;
        if self.n_healthy_speakers < 1
            || self.n_dysarthric_speakers < 1
            || self.utterances_per_speaker < 1
            || self.reference_utterances < 1
        {
            return Err(DsrError::Config("corpus counts must all be at least 1".into()));
        }
        if p.tempo_factor < 1.0 || !(0.0..=1.0).contains(&p.pitch_flatten) || !(0.0..=1.0).contains(&p.substitution_rate) {
            return Err(DsrError::Config(format!("invalid dysarthria profile {p:?}")));
        }
        PhonemeInventory::standard(self.phoneme_inventory_size)?;
        Ok(())
    }

    pub fn inventory(&self) -> PhonemeInventory {
        PhonemeInventory::standard(self.phoneme_inventory_size).expect("validated inventory size")
    }
}

/// Acoustic identity of one speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVoice {
    pub name: String,
    pub role: Role,
    pub formant_scale: f64,
    /// One-pole low-pass coefficient in `[0, 1)`; larger is darker.
    pub tilt: f64,
    pub base_f0: f64,
    /// Multiplier on the prosody model's pitch excursions.
    pub pitch_range: f64,
    pub tempo: f64,
    pub substitution_rate: f64,
    /// Confusion partner of every inventory id (identity for non-speech).
    pub confusion: Vec<usize>,
}

/// A rendered utterance with its exact ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedUtterance {
    pub wav: Waveform,
    pub alignment: PhonemeAlignment,
    pub log_f0: Vec<f64>,
    pub voicing: Vec<bool>,
    /// Which entries were rendered with a substituted articulation.
    pub substituted: Vec<bool>,
}

/// Generator keyed by `(seed, key)`; independent of generation order.
pub fn derive_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(key.as_bytes()).finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Nominal duration (frames) of a phoneme in the shared prosody model.
fn base_duration(inv: &PhonemeInventory, id: usize) -> usize {
    match inv.acoustics(id) {
        None => SILENCE_FRAMES,
        Some(a) if !a.voiced => 9,
        Some(a) if a.gain >= 0.9 => 12,
        Some(_) => 8,
    }
}

/// Pitch target of a phoneme, log-domain offset from the speaker's base.
pub fn pitch_offset(inv: &PhonemeInventory, id: usize) -> f64 {
    if inv.acoustics(id).is_none() {
        0.0
    } else {
        0.15 * ((id as f64) * 2.3).sin()
    }
}

/// Healthy-tempo durations of a label sequence. Depends only on the labels,
/// so every speaker reading the same text shares them.
pub fn healthy_durations(seed: u64, inv: &PhonemeInventory, labels: &[usize]) -> Vec<usize> {
    let mut rng = derive_rng(seed, &format!("durations:{}", inv.format_sequence(labels)));
    labels
        .iter()
        .map(|&id| {
            let jitter: i64 = rng.gen_range(-2..=2);
            (base_duration(inv, id) as i64 + jitter).max(3) as usize
        })
        .collect()
}

/// Random text: silence, 4–7 phonemes with no immediate repeats, silence.
pub fn random_text(rng: &mut ChaCha8Rng, inv: &PhonemeInventory) -> Vec<usize> {
    let speech: Vec<usize> = inv.speech_ids().collect();
    let n = rng.gen_range(4..=7);
    let mut out = vec![inv.silence()];
    while out.len() < n + 1 {
        let p = *speech.choose(rng).expect("non-empty inventory");
        if *out.last().expect("non-empty") != p {
            out.push(p);
        }
    }
    out.push(inv.silence());
    out
}

/// Speaker voices for the whole corpus: healthy, prosody reference,
/// dysarthric, in that order.
pub fn speaker_voices(cfg: &ToyCorpusConfig) -> Vec<SpeakerVoice> {
    let inv = cfg.inventory();
    let mut rng = derive_rng(cfg.seed, "voices");
    let n = cfg.n_healthy_speakers;
    let grid = |i: usize, lo: f64, hi: f64| if n == 1 { (lo + hi) / 2.0 } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let mut tilt_order: Vec<usize> = (0..n).collect();
    tilt_order.shuffle(&mut rng);
    let mut f0_order: Vec<usize> = (0..n).collect();
    f0_order.shuffle(&mut rng);

    let identity: Vec<usize> = (0..inv.len()).collect();
    let mut voices = Vec::new();
    for i in 0..n {
        voices.push(SpeakerVoice {
            name: format!("h{i:02}"),
            role: Role::Healthy,
            formant_scale: grid(i, 0.82, 1.18) + rng.gen_range(-0.01..0.01),
            tilt: grid(tilt_order[i], 0.1, 0.8),
            base_f0: grid(f0_order[i], 95.0, 230.0),
            pitch_range: 1.0,
            tempo: 1.0,
            substitution_rate: 0.0,
            confusion: identity.clone(),
        });
    }
    voices.push(SpeakerVoice {
        name: "ref".into(),
        role: Role::ProsodyReference,
        formant_scale: 1.0,
        tilt: 0.45,
        base_f0: 150.0,
        pitch_range: 1.0,
        tempo: 1.0,
        substitution_rate: 0.0,
        confusion: identity.clone(),
    });
    let p = cfg.dysarthria;
    for d in 0..cfg.n_dysarthric_speakers {
        let side = if d % 2 == 0 { -1.0 } else { 1.0 };
        voices.push(SpeakerVoice {
            name: format!("d{d:02}"),
            role: Role::Dysarthric,
            formant_scale: 1.0 + side * rng.gen_range(0.08..0.14),
            tilt: rng.gen_range(0.2..0.7),
            base_f0: rng.gen_range(110.0..200.0),
            pitch_range: 1.0 - p.pitch_flatten,
            tempo: p.tempo_factor,
            substitution_rate: p.substitution_rate,
            confusion: confusion_partners(&inv, &mut rng),
        });
    }
    voices
}

/// A random other phoneme of the same voicing class for every speech id.
fn confusion_partners(inv: &PhonemeInventory, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out: Vec<usize> = (0..inv.len()).collect();
    for id in inv.speech_ids() {
        let voiced = inv.acoustics(id).expect("speech id").voiced;
        let same: Vec<usize> =
            inv.speech_ids().filter(|&o| o != id && inv.acoustics(o).expect("speech id").voiced == voiced).collect();
        if let Some(&p) = same.choose(rng) {
            out[id] = p;
        }
    }
    out
}

/// Two-pole resonator with unit gain at DC-normalised peak.
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { a1: 0.0, a2: 0.0, g: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn tune(&mut self, freq: f64, bandwidth: f64) {
        let r = (-PI * bandwidth / SAMPLE_RATE as f64).exp();
        let theta = 2.0 * PI * freq / SAMPLE_RATE as f64;
        self.a1 = 2.0 * r * theta.cos();
        self.a2 = -r * r;
        self.g = 1.0 - r;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders `labels` with `durations` (already tempo-scaled) in `voice`.
pub fn render(
    voice: &SpeakerVoice,
    inv: &PhonemeInventory,
    labels: &[usize],
    durations: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<RenderedUtterance> {
    let alignment = PhonemeAlignment::new(labels.iter().copied().zip(durations.iter().copied()).collect())?;
    let frames = alignment.total_frames();
    let hop = FrameConfig::default().hop_len;
    let n_samples = hop * frames + (FrameConfig::default().window_len - hop);

    // frame-level pitch: per-phoneme targets, smoothed over five frames
    let base = voice.base_f0.ln() + 0.02 * rng.gen_range(-1.0..1.0);
    let targets: Vec<f64> = alignment
        .frame_labels()
        .iter()
        .map(|&id| base + voice.pitch_range * pitch_offset(inv, id))
        .collect();
    let contour: Vec<f64> = (0..frames)
        .map(|t| {
            let lo = t.saturating_sub(2);
            let hi = (t + 3).min(frames);
            targets[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let voicing: Vec<bool> =
        alignment.frame_labels().iter().map(|&id| inv.acoustics(id).map(|a| a.voiced).unwrap_or(false)).collect();
    let log_f0: Vec<f64> = contour.iter().zip(&voicing).map(|(&c, &v)| if v { c } else { 0.0 }).collect();

    let substituted: Vec<bool> = labels
        .iter()
        .map(|&id| inv.acoustics(id).is_some() && rng.gen_bool(voice.substitution_rate))
        .collect();

    let mut samples = vec![0.0; n_samples];
    let (mut r1, mut r2, mut r3) = (Resonator::new(), Resonator::new(), Resonator::new());
    let mut lp = 0.0;
    let mut phase = 0.0;
    let mut start_frame = 0;
    for (i, &(id, dur)) in alignment.entries.iter().enumerate() {
        let s0 = if i == 0 { 0 } else { hop * start_frame + BOUNDARY_OFFSET };
        let s1 = if i + 1 == alignment.entries.len() { n_samples } else { hop * (start_frame + dur) + BOUNDARY_OFFSET };
        let seg = &mut samples[s0..s1];
        match inv.acoustics(id) {
            None => {
                for s in seg.iter_mut() {
                    let n: f64 = StandardNormal.sample(rng);
                    *s = n;
                }
                normalize_rms(seg, SILENCE_RMS);
            }
            Some(a) => {
                let (mut f1, mut f2) = (a.f1, a.f2);
                if substituted[i] {
                    let b = inv.acoustics(voice.confusion[id]).expect("partner is a speech id");
                    f1 = (1.0 - SUBSTITUTION_MIX) * f1 + SUBSTITUTION_MIX * b.f1;
                    f2 = (1.0 - SUBSTITUTION_MIX) * f2 + SUBSTITUTION_MIX * b.f2;
                }
                let nyq = SAMPLE_RATE as f64 / 2.0 - 200.0;
                r1.tune((voice.formant_scale * f1).min(nyq), 90.0);
                r2.tune((voice.formant_scale * f2).min(nyq), 140.0);
                r3.tune((voice.formant_scale * 2900.0).min(nyq), 220.0);
                for (k, s) in seg.iter_mut().enumerate() {
                    let x = if a.voiced {
                        // sample-level F0 follows the frame contour
                        let t = ((s0 + k) as f64 - 200.0) / hop as f64;
                        let f0 = interp(&contour, t).exp();
                        phase += f0 / SAMPLE_RATE as f64;
                        if phase >= 1.0 {
                            phase -= 1.0;
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        StandardNormal.sample(rng)
                    };
                    let y = r1.process(x) + r2.process(x) + 0.5 * r3.process(x);
                    lp = (1.0 - voice.tilt) * y + voice.tilt * lp;
                    *s = lp;
                }
                normalize_rms(seg, SPEECH_RMS * a.gain);
            }
        }
        start_frame += dur;
    }
    for s in samples.iter_mut() {
        *s = s.clamp(-0.99, 0.99);
    }
    let wav = Waveform::new(samples, SAMPLE_RATE)?.quantized();
    Ok(RenderedUtterance { wav, alignment, log_f0, voicing, substituted })
}

fn interp(xs: &[f64], t: f64) -> f64 {
    if t <= 0.0 {
        return xs[0];
    }
    let i = t.floor() as usize;
    if i + 1 >= xs.len() {
        return xs[xs.len() - 1];
    }
    let w = t - i as f64;
    xs[i] * (1.0 - w) + xs[i + 1] * w
}

fn normalize_rms(seg: &mut [f64], target: f64) {
    let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        for v in seg.iter_mut() {
            *v *= target / rms;
        }
    }
}

/// Tempo-scaled durations.
pub fn scale_durations(durations: &[usize], tempo: f64) -> Vec<usize> {
    durations.iter().map(|&d| ((d as f64 * tempo).round() as usize).max(1)).collect()
}

/// Renders one utterance of `voice` reading `labels`.
pub fn render_text(cfg: &ToyCorpusConfig, voice: &SpeakerVoice, labels: &[usize], utt_id: &str) -> Result<RenderedUtterance> {
    let inv = cfg.inventory();
    let durations = scale_durations(&healthy_durations(cfg.seed, &inv, labels), voice.tempo);
    let mut rng = derive_rng(cfg.seed, &format!("render:{utt_id}"));
    render(voice, &inv, labels, &durations, &mut rng)
}

/// Per-frame ground-truth pitch file: `log_f0<TAB>voiced` lines.
pub fn f0_to_text(log_f0: &[f64], voicing: &[bool]) -> String {
    log_f0.iter().zip(voicing).map(|(f, &v)| format!("{f}\t{}\n", u8::from(v))).collect()
}

pub fn parse_f0_text(text: &str) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut f = Vec::new();
    let mut v = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || DsrError::Corpus(format!("malformed pitch line {}", i + 1));
        let (a, b) = line.split_once('\t').ok_or_else(bad)?;
        f.push(a.trim().parse::<f64>().map_err(|_| bad())?);
        v.push(match b.trim() {
            "1" => true,
            "0" => false,
            _ => return Err(bad()),
        });
    }
    Ok((f, v))
}

fn split_for(role: Role, index: usize) -> Split {
    match role {
        Role::Dysarthric if index % 3 == 1 => Split::Test,
        Role::Healthy | Role::ProsodyReference if index % 5 == 4 => Split::Test,
        _ => Split::Train,
    }
}

/// Writes the corpus under `out_dir` and returns its validated manifest.
pub fn synthesize_toy_corpus(cfg: &ToyCorpusConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let inv = cfg.inventory();
    for sub in ["wav", "align", "labels", "f0"] {
        std::fs::create_dir_all(out_dir.join(sub))
            .map_err(|e| DsrError::Corpus(format!("cannot create {}: {e}", out_dir.join(sub).display())))?;
    }
    let voices = speaker_voices(cfg);
    let mut entries = Vec::new();
    for voice in &voices {
        let count = match voice.role {
            Role::ProsodyReference => cfg.reference_utterances,
            _ => cfg.utterances_per_speaker,
        };
        for i in 0..count {
            let id = format!("{}_{i:03}", voice.name);
            let mut text_rng = derive_rng(cfg.seed, &format!("text:{id}"));
            let labels = random_text(&mut text_rng, &inv);
            let utt = render_text(cfg, voice, &labels, &id)?;
            let entry = ManifestEntry {
                id: id.clone(),
                speaker: voice.name.clone(),
                role: voice.role,
                split: split_for(voice.role, i),
                wav: format!("wav/{id}.wav"),
                alignment: format!("align/{id}.tsv"),
                labels: format!("labels/{id}.txt"),
                f0: format!("f0/{id}.f0"),
            };
            write_wav(&out_dir.join(&entry.wav), &utt.wav)?;
            std::fs::write(out_dir.join(&entry.alignment), utt.alignment.to_tsv(&inv))?;
            std::fs::write(out_dir.join(&entry.labels), inv.format_sequence(&labels) + "\n")?;
            std::fs::write(out_dir.join(&entry.f0), f0_to_text(&utt.log_f0, &utt.voicing))?;
            entries.push(entry);
        }
    }
    std::fs::write(out_dir.join("corpus.json"), serde_json::to_string_pretty(cfg)?)?;
    std::fs::write(out_dir.join("speakers.json"), serde_json::to_string_pretty(&voices)?)?;
    let manifest = Manifest::new(out_dir.to_path_buf(), entries);
    manifest.save()?;
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_f0, mel_spectrogram};

    fn small() -> ToyCorpusConfig {
        ToyCorpusConfig {
            n_healthy_speakers: 2,
            n_dysarthric_speakers: 1,
            utterances_per_speaker: 3,
            reference_utterances: 2,
            ..Default::default()
        }
    }

    #[test]
    fn frame_count_matches_alignment() {
        let cfg = small();
        let voices = speaker_voices(&cfg);
        let inv = cfg.inventory();
        let labels = vec![0, 1, 9, 2, 6, 0];
        for v in &voices {
            let u = render_text(&cfg, v, &labels, "x").unwrap();
            let mel = mel_spectrogram(&u.wav, &FrameConfig::mel80()).unwrap();
            assert_eq!(mel.frames(), u.alignment.total_frames());
            assert_eq!(u.log_f0.len(), mel.frames());
            assert_eq!(u.alignment.phonemes(), labels);
            assert!(u.wav.samples.iter().all(|s| s.abs() < 1.0));
            let _ = &inv;
        }
    }

    #[test]
    fn dysarthric_tempo_scales_durations() {
        let cfg = small();
        let voices = speaker_voices(&cfg);
        let healthy = &voices[0];
        let dys = voices.iter().find(|v| v.role == Role::Dysarthric).unwrap();
        let labels = vec![0, 3, 7, 1, 10, 4, 0];
        let h = render_text(&cfg, healthy, &labels, "a").unwrap().alignment;
        let d = render_text(&cfg, dys, &labels, "b").unwrap().alignment;
        for (hd, dd) in h.durations().iter().zip(d.durations()) {
            assert!((dd as f64 - cfg.dysarthria.tempo_factor * *hd as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn degenerate_profile_matches_healthy_alignment() {
        let mut cfg = small();
        cfg.dysarthria = DysarthriaProfile { tempo_factor: 1.0, pitch_flatten: 0.0, substitution_rate: 0.0 };
        let voices = speaker_voices(&cfg);
        let dys = voices.iter().find(|v| v.role == Role::Dysarthric).unwrap();
        let labels = vec![0, 2, 5, 8, 0];
        let a = render_text(&cfg, &voices[1], &labels, "a").unwrap();
        let b = render_text(&cfg, dys, &labels, "b").unwrap();
        assert_eq!(a.alignment, b.alignment);
        assert!(b.substituted.iter().all(|s| !s));
    }

    #[test]
    fn pitch_ground_truth_matches_detector() {
        let cfg = small();
        let voices = speaker_voices(&cfg);
        let u = render_text(&cfg, &voices[0], &[0, 1, 4, 3, 0], "p").unwrap();
        let track = extract_f0(&u.wav, &FrameConfig::mel80()).unwrap();
        let mut err = Vec::new();
        for t in 0..track.frames() {
            if track.voicing[t] && u.voicing[t] {
                err.push((track.log_f0[t] - u.log_f0[t]).abs());
            }
        }
        assert!(err.len() > 10);
        let mean = err.iter().sum::<f64>() / err.len() as f64;
        assert!(mean < 0.05, "mean log-F0 error {mean}");
    }

    #[test]
    fn texts_have_no_adjacent_repeats() {
        let inv = PhonemeInventory::default();
        let mut rng = derive_rng(5, "t");
        for _ in 0..50 {
            let t = random_text(&mut rng, &inv);
            assert!((6..=9).contains(&t.len()));
            assert_eq!(t[0], 0);
            assert_eq!(*t.last().unwrap(), 0);
            assert!(t.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn corpus_is_deterministic_and_validates() {
        let cfg = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = synthesize_toy_corpus(&cfg, a.path()).unwrap();
        let mb = synthesize_toy_corpus(&cfg, b.path()).unwrap();
        assert_eq!(ma.entries, mb.entries);
        assert_eq!(ma.entries.len(), 2 * 3 + 2 + 3);
        for e in &ma.entries {
            for rel in [&e.wav, &e.alignment, &e.labels, &e.f0] {
                assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
            }
        }
        let loaded = Manifest::load(&a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.entries, ma.entries);
    }

    #[test]
    fn pitch_text_round_trip() {
        let f = vec![0.0, 5.123456789012345, 4.9];
        let v = vec![false, true, true];
        assert_eq!(parse_f0_text(&f0_to_text(&f, &v)).unwrap(), (f, v));
    }
}
