//! The phoneme inventory shared by alignments, labels and the speech encoder.

use crate::error::{DsrError, Result};

pub const SILENCE: &str = "SIL";
pub const END_OF_SEQUENCE: &str = "EOS";

/// Acoustic template of one toy phoneme: two formants and an excitation type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhonemeAcoustics {
    pub symbol: &'static str,
    pub f1: f64,
    pub f2: f64,
    pub voiced: bool,
    pub gain: f64,
}

const fn ph(symbol: &'static str, f1: f64, f2: f64, voiced: bool, gain: f64) -> PhonemeAcoustics {
    PhonemeAcoustics { symbol, f1, f2, voiced, gain }
}

/// Every phoneme the toy synthesiser knows, in inventory order.
pub const PHONEME_TABLE: [PhonemeAcoustics; 18] = [
    ph("AA", 800.0, 1250.0, true, 1.0),
    ph("IY", 290.0, 2350.0, true, 0.9),
    ph("UW", 310.0, 850.0, true, 0.9),
    ph("EH", 560.0, 1850.0, true, 1.0),
    ph("OW", 520.0, 1000.0, true, 1.0),
    ph("M", 260.0, 1450.0, true, 0.6),
    ph("N", 420.0, 2700.0, true, 0.6),
    ph("B", 680.0, 1650.0, true, 0.7),
    ph("S", 4600.0, 6600.0, false, 0.5),
    ph("F", 2300.0, 4100.0, false, 0.4),
    ph("SH", 2900.0, 5200.0, false, 0.5),
    ph("Z", 350.0, 3300.0, true, 0.7),
    ph("L", 380.0, 1150.0, true, 0.8),
    ph("R", 450.0, 1400.0, true, 0.8),
    ph("AE", 690.0, 2050.0, true, 1.0),
    ph("ER", 480.0, 1600.0, true, 0.9),
    ph("V", 300.0, 1900.0, true, 0.6),
    ph("TH", 1800.0, 3500.0, false, 0.4),
];

/// Ordered symbol set: `SIL`, then the speech phonemes, then `EOS`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        Self::standard(12).expect("default inventory size is valid")
    }
}

impl PhonemeInventory {
    /// Inventory of `size` symbols (silence and end-of-sequence included).
    pub fn standard(size: usize) -> Result<Self> {
        let speech = size.checked_sub(2).filter(|&n| n >= 1 && n <= PHONEME_TABLE.len());
        let Some(speech) = speech else {
            return Err(DsrError::Config(format!(
                "phoneme inventory size must be in 3..={}, got {size}",
                PHONEME_TABLE.len() + 2
            )));
        };
        let mut symbols = vec![SILENCE.to_string()];
        symbols.extend(PHONEME_TABLE[..speech].iter().map(|p| p.symbol.to_string()));
        symbols.push(END_OF_SEQUENCE.to_string());
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn silence(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        self.symbols.len() - 1
    }

    /// Ids of the speech phonemes (neither silence nor end-of-sequence).
    pub fn speech_ids(&self) -> std::ops::Range<usize> {
        1..self.symbols.len() - 1
    }

    pub fn acoustics(&self, id: usize) -> Option<&'static PhonemeAcoustics> {
        if self.speech_ids().contains(&id) {
            Some(&PHONEME_TABLE[id - 1])
        } else {
            None
        }
    }

    /// Parses whitespace-separated symbols.
    pub fn parse_sequence(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .enumerate()
            .map(|(i, s)| {
                self.id(s)
                    .ok_or_else(|| DsrError::UnknownPhoneme { symbol: s.to_string(), line: i + 1 })
            })
            .collect()
    }

    pub fn format_sequence(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.symbol(i)).collect::<Vec<_>>().join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_twelve_symbols() {
        let inv = PhonemeInventory::default();
        assert_eq!(inv.len(), 12);
        assert_eq!(inv.symbol(0), SILENCE);
        assert_eq!(inv.symbol(11), END_OF_SEQUENCE);
        assert_eq!(inv.id("B"), Some(8));
        assert_eq!(inv.speech_ids().len(), 10);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(PhonemeInventory::standard(2).is_err());
        assert!(PhonemeInventory::standard(PHONEME_TABLE.len() + 3).is_err());
    }
}
