//! Stage-wise training of the reconstruction system and inference.

pub mod config;
pub mod data;
pub mod reconstruct;
pub mod report;
pub mod stages;
pub mod trainer;

pub use config::{AsaStageConfig, Profile, RunConfig, RunFile, SpeakerStageConfig, StageConfig, TrainingConfig};
pub use data::{analyze_wav, prepare_corpus, FeatureStats, PreparedCorpus, PreparedUtterance};
pub use reconstruct::{reconstruct, ProsodyMode, Reconstruction, ReconstructionInput};
pub use report::{JsonlSink, MemorySink, NullSink, ReportSink, StepRecord};
pub use stages::{
    finetune_speech_encoder, pretrain_speech_encoder, train_generator, train_prosody, train_speaker_encoder,
    RunControl,
};
pub use trainer::{StepOutput, Trainer};
