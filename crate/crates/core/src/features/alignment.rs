//! Phoneme alignments: UTF-8 TSV, one `symbol<TAB>duration_frames` per line
//! in temporal order.

use std::path::Path;

use crate::error::{DsrError, Result};
use crate::phoneme::PhonemeInventory;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeAlignment {
    /// `(phoneme id, duration in frames)`, all durations ≥ 1.
    pub entries: Vec<(usize, usize)>,
}

impl PhonemeAlignment {
    pub fn new(entries: Vec<(usize, usize)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(DsrError::EmptyAlignment);
        }
        if let Some(i) = entries.iter().position(|&(_, d)| d == 0) {
            return Err(DsrError::NonPositiveDuration { value: "0".into(), line: i + 1 });
        }
        Ok(Self { entries })
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|&(_, d)| d).sum()
    }

    pub fn phonemes(&self) -> Vec<usize> {
        self.entries.iter().map(|&(p, _)| p).collect()
    }

    pub fn durations(&self) -> Vec<usize> {
        self.entries.iter().map(|&(_, d)| d).collect()
    }

    /// Phoneme id of every frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        self.entries.iter().flat_map(|&(p, d)| std::iter::repeat(p).take(d)).collect()
    }

    pub fn check_frames(&self, frames: usize) -> Result<()> {
        let total = self.total_frames();
        if total != frames {
            return Err(DsrError::FrameCountMismatch { alignment: total, utterance: frames });
        }
        Ok(())
    }

    pub fn to_tsv(&self, inventory: &PhonemeInventory) -> String {
        self.entries.iter().map(|&(p, d)| format!("{}\t{d}\n", inventory.symbol(p))).collect()
    }
}

pub fn parse_alignment(text: &str, inventory: &PhonemeInventory) -> Result<PhonemeAlignment> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let (Some(symbol), Some(dur), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(DsrError::MalformedAlignment { line, reason: "expected `phoneme<TAB>duration`".into() });
        };
        let symbol = symbol.trim();
        let id = inventory
            .id(symbol)
            .ok_or_else(|| DsrError::UnknownPhoneme { symbol: symbol.to_string(), line })?;
        let dur_text = dur.trim();
        let value: i64 = dur_text
            .parse()
            .map_err(|_| DsrError::MalformedAlignment { line, reason: format!("duration `{dur_text}` is not an integer") })?;
        if value <= 0 {
            return Err(DsrError::NonPositiveDuration { value: dur_text.to_string(), line });
        }
        entries.push((id, value as usize));
    }
    if entries.is_empty() {
        return Err(DsrError::EmptyAlignment);
    }
    Ok(PhonemeAlignment { entries })
}

/// Reads an alignment without a frame-count check.
pub fn read_alignment(path: &Path, inventory: &PhonemeInventory) -> Result<PhonemeAlignment> {
    if !path.exists() {
        return Err(DsrError::MissingFile(path.to_path_buf()));
    }
    parse_alignment(&std::fs::read_to_string(path)?, inventory)
}

/// Reads an alignment and checks it covers exactly `frames` frames.
pub fn load_alignment(path: &Path, inventory: &PhonemeInventory, frames: usize) -> Result<PhonemeAlignment> {
    let a = read_alignment(path, inventory)?;
    a.check_frames(frames)?;
    Ok(a)
}
