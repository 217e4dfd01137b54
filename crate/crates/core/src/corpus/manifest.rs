//! Corpus manifest: one JSON record per utterance, paths relative to the
//! manifest's directory.
//!
//! ```text
//! {"id":"h00_000","speaker":"h00","role":"healthy","split":"train","wav":"wav/h00_000.wav","alignment":"align/h00_000.tsv","labels":"labels/h00_000.txt","f0":"f0/h00_000.f0"}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DsrError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Healthy,
    ProsodyReference,
    Dysarthric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: String,
    pub role: Role,
    pub split: Split,
    pub wav: String,
    pub alignment: String,
    pub labels: String,
    pub f0: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Self {
        Self { root, entries }
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(root: PathBuf, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| DsrError::Manifest(format!("line {}: {err}", i + 1)))?;
            entries.push(e);
        }
        Ok(Self { root, entries })
    }

    pub fn save(&self) -> Result<()> {
        std::fs::write(self.path(), self.to_jsonl()?)?;
        Ok(())
    }

    /// Reads and validates a manifest. `path` may name the file or its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        if !file.exists() {
            return Err(DsrError::MissingFile(file));
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(root, &std::fs::read_to_string(&file)?)?;
        m.validate()?;
        Ok(m)
    }

    /// Checks every structural invariant without touching the disk.
    pub fn validate_records(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(DsrError::Manifest("no entries".into()));
        }
        let mut ids = HashSet::new();
        let mut roles: BTreeMap<&str, Role> = BTreeMap::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(DsrError::Manifest(format!("duplicate utterance id `{}`", e.id)));
            }
            match roles.insert(&e.speaker, e.role) {
                Some(r) if r != e.role => {
                    return Err(DsrError::Manifest(format!("speaker `{}` has more than one role", e.speaker)))
                }
                _ => {}
            }
        }
        let refs: Vec<&str> = roles.iter().filter(|(_, r)| **r == Role::ProsodyReference).map(|(s, _)| *s).collect();
        if refs.len() != 1 {
            return Err(DsrError::Manifest(format!(
                "exactly one prosody_reference speaker required, found {} ({})",
                refs.len(),
                refs.join(", ")
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_records()?;
        for e in &self.entries {
            for rel in [&e.wav, &e.alignment, &e.labels, &e.f0] {
                let p = self.resolve(rel);
                if !p.exists() {
                    return Err(DsrError::MissingFile(p));
                }
            }
        }
        Ok(())
    }

    pub fn select(&self, role: Option<Role>, speaker: Option<&str>, split: Option<Split>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| role.map_or(true, |r| e.role == r))
            .filter(|e| speaker.map_or(true, |s| e.speaker == s))
            .filter(|e| split.map_or(true, |s| e.split == s))
            .collect()
    }

    /// Speakers in first-appearance order.
    pub fn speakers(&self, role: Option<Role>) -> Vec<String> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if role.map_or(true, |r| e.role == r) && !seen.contains(&e.speaker) {
                seen.push(e.speaker.clone());
            }
        }
        seen
    }

    pub fn prosody_reference(&self) -> Result<String> {
        self.speakers(Some(Role::ProsodyReference))
            .into_iter()
            .next()
            .ok_or_else(|| DsrError::Manifest("no prosody_reference speaker".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, speaker: &str, role: Role) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            speaker: speaker.into(),
            role,
            split: Split::Train,
            wav: format!("wav/{id}.wav"),
            alignment: format!("align/{id}.tsv"),
            labels: format!("labels/{id}.txt"),
            f0: format!("f0/{id}.f0"),
        }
    }

    #[test]
    fn two_reference_speakers_fail_validation() {
        let m = Manifest::new(
            PathBuf::from("."),
            vec![entry("a", "r1", Role::ProsodyReference), entry("b", "r2", Role::ProsodyReference)],
        );
        assert!(matches!(m.validate_records(), Err(DsrError::Manifest(msg)) if msg.contains("exactly one")));
    }

    #[test]
    fn duplicate_ids_and_mixed_roles_fail() {
        let m = Manifest::new(
            PathBuf::from("."),
            vec![entry("a", "r", Role::ProsodyReference), entry("a", "h", Role::Healthy)],
        );
        assert!(m.validate_records().is_err());
        let m = Manifest::new(
            PathBuf::from("."),
            vec![entry("a", "r", Role::ProsodyReference), entry("b", "r", Role::Healthy)],
        );
        assert!(m.validate_records().is_err());
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(dir.path().to_path_buf(), vec![entry("a", "r", Role::ProsodyReference)]);
        m.save().unwrap();
        assert!(matches!(Manifest::load(dir.path()), Err(DsrError::MissingFile(_))));
        assert!(matches!(Manifest::load(&dir.path().join("none.jsonl")), Err(DsrError::MissingFile(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let m = Manifest::new(
            PathBuf::from("/x"),
            vec![entry("a", "r", Role::ProsodyReference), entry("b", "d", Role::Dysarthric)],
        );
        let back = Manifest::parse(PathBuf::from("/x"), &m.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_jsonl().unwrap().contains("\"role\":\"prosody_reference\""));
    }
}
