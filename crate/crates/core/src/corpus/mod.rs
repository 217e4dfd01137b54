//! Toy corpus synthesis, manifests and checkpoint persistence.

pub mod checkpoint;
pub mod manifest;
pub mod synth;

pub use checkpoint::{
    bundle_from_checkpoint, bundle_to_checkpoint, load_bundle, save_bundle, Checkpoint, Section, TrainingCheckpoint,
};
pub use manifest::{Manifest, ManifestEntry, Role, Split, MANIFEST_FILE};
pub use synth::{
    derive_rng, f0_to_text, healthy_durations, parse_f0_text, render_text, speaker_voices, synthesize_toy_corpus,
    DysarthriaProfile, RenderedUtterance, SpeakerVoice, ToyCorpusConfig,
};
