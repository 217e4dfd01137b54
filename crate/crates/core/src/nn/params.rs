use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{Gradients, Graph, Var};
use crate::error::{DsrError, Result};

/// Which network a parameter set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModuleTag {
    SpeechEncoder,
    DurationPredictor,
    PitchPredictor,
    SpeakerEncoder,
    Generator,
    Discriminator,
}

impl ModuleTag {
    pub const ALL: [ModuleTag; 6] = [
        ModuleTag::SpeechEncoder,
        ModuleTag::DurationPredictor,
        ModuleTag::PitchPredictor,
        ModuleTag::SpeakerEncoder,
        ModuleTag::Generator,
        ModuleTag::Discriminator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleTag::SpeechEncoder => "speech_encoder",
            ModuleTag::DurationPredictor => "duration_predictor",
            ModuleTag::PitchPredictor => "pitch_predictor",
            ModuleTag::SpeakerEncoder => "speaker_encoder",
            ModuleTag::Generator => "generator",
            ModuleTag::Discriminator => "discriminator",
        }
    }
}

impl fmt::Display for ModuleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModuleTag {
    type Err = DsrError;

    fn from_str(s: &str) -> Result<Self> {
        ModuleTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DsrError::MalformedCheckpoint(format!("unknown module tag `{s}`")))
    }
}

/// An ordered set of named parameter matrices for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tag: ModuleTag,
    version: String,
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new(tag: ModuleTag, version: impl Into<String>) -> Self {
        Self {
            tag,
            version: version.into(),
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn tag(&self) -> ModuleTag {
        self.tag
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
        } else {
            self.index.insert(name.clone(), self.names.len());
            self.names.push(name);
            self.tensors.push(value);
        }
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        match self.index.get(name) {
            Some(&i) => &self.tensors[i],
            None => panic!("{}: no parameter named `{name}`", self.tag),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over tag, names, shapes and the exact bits of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tag.as_str().as_bytes());
        h.update([0u8]);
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((t.nrows() as u64).to_le_bytes());
            h.update((t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }

    /// Registers every tensor on `graph`, as gradient-tracked leaves when
    /// `trainable`, as constants otherwise.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { graph.leaf(t.clone()) } else { graph.constant(t.clone()) })
            .collect();
        Bound { index: self.index.clone(), vars, shapes: self.tensors.iter().map(|t| t.dim()).collect() }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Graph handles for one [`ModelParams`], in parameter order.
#[derive(Clone, Debug)]
pub struct Bound {
    index: HashMap<String, usize>,
    vars: Vec<Var>,
    shapes: Vec<(usize, usize)>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("no bound parameter named `{name}`"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients, zero-filled where the loss does not reach.
    pub fn grads(&self, grads: &Gradients) -> Vec<Array2<f64>> {
        self.vars
            .iter()
            .zip(&self.shapes)
            .map(|(&v, &shape)| grads.get_or_zeros(v, shape))
            .collect()
    }

    /// True when no parameter received any gradient.
    pub fn untouched(&self, grads: &Gradients) -> bool {
        self.vars.iter().all(|&v| grads.get(v).is_none())
    }
}

/// Parameter initialisation helpers over a seeded generator.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(rows, cols, bound)
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.rng.gen_range(-bound..bound))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::zeros((rows, cols))
    }
}
