//! Turns a manifest into normalised feature matrices with aligned targets.

use std::path::Path;

use ndarray::Array2;

use crate::corpus::{parse_f0_text, Manifest, ManifestEntry, Role, Split, ToyCorpusConfig};
use crate::error::{DsrError, Result};
use crate::features::{
    append_deltas, compute_stats, extract_f0, load_alignment, mel_spectrogram, read_wav, F0Track, FrameConfig,
    NormStats, PhonemeAlignment,
};
use crate::phoneme::PhonemeInventory;

/// Normalisation statistics for the three feature streams.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub feat: NormStats,
    pub mel40: NormStats,
    pub mel80: NormStats,
}

impl FeatureStats {
    pub const FILES: [&'static str; 3] = ["stats_feat120.txt", "stats_mel40.txt", "stats_mel80.txt"];

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, s) in Self::FILES.iter().zip([&self.feat, &self.mel40, &self.mel80]) {
            s.save(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let [a, b, c] = Self::FILES.map(|n| NormStats::load(&dir.join(n)));
        Ok(Self { feat: a?, mel40: b?, mel80: c? })
    }
}

/// Un-normalised analysis of one waveform.
#[derive(Clone, Debug)]
pub struct RawFeatures {
    pub feat: Array2<f64>,
    pub mel40: Array2<f64>,
    pub mel80: Array2<f64>,
}

pub fn analyze_wav(path: &Path) -> Result<RawFeatures> {
    let wav = read_wav(path)?;
    let mel40 = mel_spectrogram(&wav, &FrameConfig::mel40())?;
    let mel80 = mel_spectrogram(&wav, &FrameConfig::mel80())?;
    let feat = append_deltas(&mel40)?.values;
    Ok(RawFeatures { feat, mel40: mel40.values, mel80: mel80.values })
}

/// One utterance ready for training: normalised streams plus targets.
#[derive(Clone, Debug)]
pub struct PreparedUtterance {
    pub entry: ManifestEntry,
    pub feat: Array2<f64>,
    pub mel40: Array2<f64>,
    pub mel80: Array2<f64>,
    pub alignment: PhonemeAlignment,
    /// Intended phoneme sequence.
    pub labels: Vec<usize>,
    /// Interpolated log-F0, one value per frame.
    pub log_f0: Vec<f64>,
    pub voicing: Vec<bool>,
}

impl PreparedUtterance {
    pub fn frames(&self) -> usize {
        self.mel80.nrows()
    }

    pub fn id(&self) -> &str {
        &self.entry.id
    }
}

#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub manifest: Manifest,
    pub inventory: PhonemeInventory,
    pub stats: FeatureStats,
    pub utterances: Vec<PreparedUtterance>,
}

/// Inventory recorded next to the manifest, or the default one.
pub fn corpus_inventory(root: &Path) -> Result<PhonemeInventory> {
    match std::fs::read_to_string(root.join("corpus.json")) {
        Ok(text) => {
            let cfg: ToyCorpusConfig = serde_json::from_str(&text)?;
            PhonemeInventory::standard(cfg.phoneme_inventory_size)
        }
        Err(_) => Ok(PhonemeInventory::default()),
    }
}

fn load_pitch(manifest: &Manifest, entry: &ManifestEntry, frames: usize) -> Result<F0Track> {
    let path = manifest.resolve(&entry.f0);
    let track = match std::fs::read_to_string(&path) {
        Ok(text) => {
            let (log_f0, voicing) = parse_f0_text(&text)?;
            F0Track { log_f0, voicing }
        }
        Err(_) => extract_f0(&read_wav(&manifest.resolve(&entry.wav))?, &FrameConfig::mel80())?,
    };
    if track.frames() < frames {
        return Err(DsrError::FrameCountMismatch { alignment: track.frames(), utterance: frames });
    }
    Ok(track.truncated(frames))
}

struct Loaded {
    entry: ManifestEntry,
    raw: RawFeatures,
    alignment: PhonemeAlignment,
    labels: Vec<usize>,
    pitch: F0Track,
}

fn load_entry(manifest: &Manifest, inv: &PhonemeInventory, entry: &ManifestEntry) -> Result<Loaded> {
    let raw = analyze_wav(&manifest.resolve(&entry.wav))?;
    let frames = raw.mel80.nrows();
    if raw.feat.nrows() != frames {
        return Err(DsrError::Shape(format!("{}: feature streams disagree on frame count", entry.id)));
    }
    let alignment = load_alignment(&manifest.resolve(&entry.alignment), inv, frames)?;
    let labels_path = manifest.resolve(&entry.labels);
    let labels = match std::fs::read_to_string(&labels_path) {
        Ok(text) => inv.parse_sequence(&text)?,
        Err(_) => alignment.phonemes(),
    };
    if labels.len() != alignment.entries.len() {
        return Err(DsrError::Corpus(format!(
            "{}: {} labels but {} aligned phonemes",
            entry.id,
            labels.len(),
            alignment.entries.len()
        )));
    }
    let pitch = load_pitch(manifest, entry, frames)?;
    Ok(Loaded { entry: entry.clone(), raw, alignment, labels, pitch })
}

/// Statistics are pooled over the healthy and prosody-reference training
/// utterances; everything is normalised with them.
pub fn prepare_corpus(manifest: &Manifest, stats: Option<FeatureStats>) -> Result<PreparedCorpus> {
    if manifest.entries.is_empty() {
        return Err(DsrError::Empty("manifest has no utterances".into()));
    }
    manifest.validate_records()?;
    let inventory = corpus_inventory(&manifest.root)?;
    let loaded: Vec<Loaded> = manifest.entries.iter().map(|e| load_entry(manifest, &inventory, e)).collect::<Result<_>>()?;
    let stats = match stats {
        Some(s) => s,
        None => {
            let pool: Vec<&Loaded> =
                loaded.iter().filter(|l| l.entry.role != Role::Dysarthric && l.entry.split == Split::Train).collect();
            FeatureStats {
                feat: compute_stats(pool.iter().map(|l| &l.raw.feat))?,
                mel40: compute_stats(pool.iter().map(|l| &l.raw.mel40))?,
                mel80: compute_stats(pool.iter().map(|l| &l.raw.mel80))?,
            }
        }
    };
    let utterances = loaded
        .into_iter()
        .map(|l| {
            Ok(PreparedUtterance {
                feat: stats.feat.normalize(&l.raw.feat)?,
                mel40: stats.mel40.normalize(&l.raw.mel40)?,
                mel80: stats.mel80.normalize(&l.raw.mel80)?,
                log_f0: l.pitch.interpolated(),
                voicing: l.pitch.voicing,
                alignment: l.alignment,
                labels: l.labels,
                entry: l.entry,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PreparedCorpus { manifest: manifest.clone(), inventory, stats, utterances })
}

impl PreparedCorpus {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        prepare_corpus(&Manifest::load(manifest_path)?, None)
    }

    pub fn select(&self, role: Option<Role>, speaker: Option<&str>, split: Option<Split>) -> Vec<&PreparedUtterance> {
        self.utterances
            .iter()
            .filter(|u| role.map_or(true, |r| u.entry.role == r))
            .filter(|u| speaker.map_or(true, |s| u.entry.speaker == s))
            .filter(|u| split.map_or(true, |s| u.entry.split == s))
            .collect()
    }

    /// Healthy-voice training utterances (every healthy speaker plus the
    /// prosody reference).
    pub fn healthy_train(&self) -> Vec<&PreparedUtterance> {
        self.utterances.iter().filter(|u| u.entry.role != Role::Dysarthric && u.entry.split == Split::Train).collect()
    }

    pub fn reference_speaker(&self) -> Result<String> {
        self.manifest.prosody_reference()
    }

    pub fn get(&self, id: &str) -> Result<&PreparedUtterance> {
        self.utterances
            .iter()
            .find(|u| u.entry.id == id)
            .ok_or_else(|| DsrError::Corpus(format!("unknown utterance `{id}`")))
    }

    pub fn require_n_phonemes(&self, n: usize) -> Result<()> {
        if self.inventory.len() != n {
            return Err(DsrError::Config(format!(
                "models expect {n} phoneme classes, the corpus has {}",
                self.inventory.len()
            )));
        }
        Ok(())
    }
}
