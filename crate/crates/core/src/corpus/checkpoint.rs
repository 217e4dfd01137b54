//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSRCKPT\0"  u32 format-version  u32 section-count
//! section*     sha256(all preceding bytes)
//!
//! section := str kind  str tag  str version
//!            u32 n_meta  (str key  str value)*
//!            u32 n_tensors  (str name  u64 rows  u64 cols)*
//!            f64 payload in table order, row-major
//!            sha256(section bytes above)
//! str     := u32 byte-length  utf-8 bytes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{DsrError, Result};
use crate::models::{ModelConfig, SystemBundle, SystemLabel};
use crate::nn::{ModelParams, ModuleTag, Optimizer, OptimizerKind};

pub const MAGIC: &[u8; 8] = b"DSRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// One named group of tensors with free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub kind: String,
    pub tag: String,
    pub version: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Section {
    pub fn new(kind: &str, tag: &str, version: &str) -> Self {
        Self {
            kind: kind.into(),
            tag: tag.into(),
            version: version.into(),
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn from_params(kind: &str, p: &ModelParams) -> Self {
        let mut s = Self::new(kind, p.tag().as_str(), p.version());
        s.tensors = p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        s
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let tag: ModuleTag = self.tag.parse()?;
        let mut p = ModelParams::new(tag, self.version.clone());
        for (name, t) in &self.tensors {
            p.insert(name.clone(), t.clone());
        }
        Ok(p)
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| DsrError::MalformedCheckpoint(format!("section {} lacks `{key}`", self.kind)))
    }

    fn encode(&self, out: &mut Vec<u8>) {
        let start = out.len();
        put_str(out, &self.kind);
        put_str(out, &self.tag);
        put_str(out, &self.version);
        out.extend((self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(out, k);
            put_str(out, v);
        }
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(out, name);
            out.extend((t.nrows() as u64).to_le_bytes());
            out.extend((t.ncols() as u64).to_le_bytes());
        }
        for (_, t) in &self.tensors {
            for v in t.iter() {
                out.extend(v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out[start..]);
        out.extend(digest);
    }

    fn decode(r: &mut Reader<'_>, index: usize) -> Result<Self> {
        let start = r.pos;
        let kind = r.string()?;
        let tag = r.string()?;
        let version = r.string()?;
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let n = r.u32()? as usize;
        let mut table = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            table.push((name, rows, cols));
        }
        let mut tensors = Vec::with_capacity(table.len());
        for (name, rows, cols) in table {
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l <= r.remaining() / 8)
                .ok_or_else(|| DsrError::MalformedCheckpoint(format!("tensor `{name}` overruns the file")))?;
            let bytes = r.take(len * 8)?;
            let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Array2::from_shape_vec((rows, cols), values).expect("length checked");
            tensors.push((name, t));
        }
        let digest = Sha256::digest(&r.bytes[start..r.pos]);
        if r.take(DIGEST_LEN)? != digest.as_slice() {
            return Err(DsrError::ChecksumFailure(format!("section {index} ({kind}/{tag})")));
        }
        Ok(Self { kind, tag, version, meta, tensors })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            s.encode(&mut out);
        }
        let digest = Sha256::digest(&out);
        out.extend(digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(DsrError::MalformedCheckpoint("not a checkpoint file".into()));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(DsrError::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let body = bytes.len() - DIGEST_LEN;
        if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
            // locate the damaged section when possible
            let count = r.u32().unwrap_or(0);
            let mut inner = Reader { bytes: &bytes[..body], pos: r.pos };
            for i in 0..count as usize {
                match Section::decode(&mut inner, i) {
                    Ok(_) => {}
                    Err(e @ DsrError::ChecksumFailure(_)) => return Err(e),
                    Err(_) => break,
                }
            }
            return Err(DsrError::ChecksumFailure("file digest".into()));
        }
        let mut r = Reader { bytes: &bytes[..body], pos: r.pos };
        let count = r.u32()? as usize;
        let mut sections = Vec::with_capacity(count.min(1 << 10));
        for i in 0..count {
            sections.push(Section::decode(&mut r, i)?);
        }
        if r.remaining() != 0 {
            return Err(DsrError::MalformedCheckpoint("trailing bytes".into()));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DsrError::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn section(&self, kind: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.kind == kind)
            .ok_or_else(|| DsrError::MalformedCheckpoint(format!("no `{kind}` section")))
    }

    pub fn sections_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.kind == kind)
    }
}

/// Serializes a system bundle (every filled slot plus label and widths).
pub fn bundle_to_checkpoint(bundle: &SystemBundle) -> Result<Checkpoint> {
    let mut head = Section::new("bundle", "system", "1");
    head.meta.insert("label".into(), bundle.label.as_str().into());
    head.meta.insert("model_config".into(), serde_json::to_string(&bundle.config)?);
    let mut ck = Checkpoint { sections: vec![head] };
    for tag in ModuleTag::ALL {
        if let Some(p) = bundle.slot(tag) {
            ck.sections.push(Section::from_params("params", p));
        }
    }
    Ok(ck)
}

pub fn bundle_from_checkpoint(ck: &Checkpoint) -> Result<SystemBundle> {
    let head = ck.section("bundle")?;
    let label: SystemLabel = head.meta("label")?.parse()?;
    let config: ModelConfig = serde_json::from_str(head.meta("model_config")?)?;
    let mut bundle = SystemBundle::empty(label, config);
    for s in ck.sections_of("params") {
        bundle.set(s.to_params()?);
    }
    Ok(bundle)
}

pub fn save_bundle(bundle: &SystemBundle, path: &Path) -> Result<()> {
    bundle_to_checkpoint(bundle)?.save(path)
}

pub fn load_bundle(path: &Path) -> Result<SystemBundle> {
    bundle_from_checkpoint(&Checkpoint::load(path)?)
}

/// Mid-training state of one stage: parameters, optimizer buffers, step and
/// any auxiliary parameter sets the stage owns.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingCheckpoint {
    pub stage: String,
    pub step: u64,
    pub params: Vec<ModelParams>,
    pub optimizers: Vec<Optimizer>,
}

impl TrainingCheckpoint {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut head = Section::new("training", &self.stage, "1");
        head.meta.insert("step".into(), self.step.to_string());
        let mut sections = vec![head];
        for (i, (p, o)) in self.params.iter().zip(&self.optimizers).enumerate() {
            sections.push(Section::from_params("params", p));
            let mut s = Section::new("optimizer", p.tag().as_str(), "1");
            s.meta.insert("index".into(), i.to_string());
            s.meta.insert("kind".into(), o.kind().to_string());
            s.meta.insert("lr".into(), format!("{:?}", o.lr()));
            s.meta.insert("steps".into(), o.steps_taken().to_string());
            let (first, second) = o.buffers();
            for (j, t) in first.iter().enumerate() {
                s.tensors.push((format!("first.{j}"), t.clone()));
            }
            for (j, t) in second.iter().enumerate() {
                s.tensors.push((format!("second.{j}"), t.clone()));
            }
            sections.push(s);
        }
        Checkpoint { sections }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let head = ck.section("training")?;
        let bad = |what: &str| DsrError::MalformedCheckpoint(format!("bad {what}"));
        let step = head.meta("step")?.parse().map_err(|_| bad("step"))?;
        let params: Vec<ModelParams> = ck.sections_of("params").map(Section::to_params).collect::<Result<_>>()?;
        let mut optimizers = Vec::new();
        for s in ck.sections_of("optimizer") {
            let kind: OptimizerKind = s.meta("kind")?.parse()?;
            let lr: f64 = s.meta("lr")?.parse().map_err(|_| bad("lr"))?;
            let steps: u64 = s.meta("steps")?.parse().map_err(|_| bad("optimizer steps"))?;
            let half = s.tensors.len() / 2;
            let first = s.tensors[..half].iter().map(|(_, t)| t.clone()).collect();
            let second = s.tensors[half..].iter().map(|(_, t)| t.clone()).collect();
            optimizers.push(Optimizer::from_state(kind, lr, steps, first, second));
        }
        if optimizers.len() != params.len() {
            return Err(bad("optimizer count"));
        }
        Ok(Self { stage: head.tag.clone(), step, params, optimizers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(DsrError::MalformedCheckpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DsrError::MalformedCheckpoint("invalid utf-8".into()))
    }
}
