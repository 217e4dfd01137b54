//! The five reconstruction networks, the system discriminator and their
//! losses.

mod bundle;
mod discriminator;
mod generator;
mod losses;
mod predictors;
mod speaker;
mod speech_encoder;

pub use bundle::{SystemBundle, SystemLabel};
pub use discriminator::{crop_index, Discriminator, PROB_EPS};
pub use generator::{expand_by_duration, expand_var, ExpandedEmbedding, Generator, LOG_F0_CENTER, LOG_F0_SCALE};
pub use losses::{discrimination_loss, discrimination_loss_value, generation_loss, generation_loss_value, mtl_loss, mtl_loss_var};
pub use predictors::{DurationPredictor, PitchPredictor};
pub use speaker::{ge2e_loss, ge2e_loss_value, SpeakerEmbedding, SpeakerEncoder, GE2E_B_INIT, GE2E_W_INIT};
pub use speech_encoder::{PhonemeEmbeddingSeq, SpeechEncoder};

use serde::{Deserialize, Serialize};

/// Widths and kernel sizes of every network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_phonemes: usize,
    pub feature_dim: usize,
    pub spk_mels: usize,
    pub out_mels: usize,
    pub embed_dim: usize,

    pub enc_conv_channels: usize,
    pub enc_hidden: usize,
    pub enc_att_dim: usize,
    pub enc_dec_hidden: usize,
    pub enc_emb_dim: usize,
    pub enc_loc_kernel: usize,

    pub pred_channels: usize,
    pub dur_kernel: usize,
    pub pitch_kernel: usize,

    pub spk_hidden: usize,
    pub spk_layers: usize,

    pub gen_channels: usize,
    pub gen_kernel: usize,
    pub gen_layers: usize,

    pub disc_channels: Vec<usize>,
    pub disc_crop: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_phonemes: 12,
            feature_dim: 120,
            spk_mels: 40,
            out_mels: 80,
            embed_dim: 256,
            enc_conv_channels: 128,
            enc_hidden: 64,
            enc_att_dim: 64,
            enc_dec_hidden: 128,
            enc_emb_dim: 32,
            enc_loc_kernel: 5,
            pred_channels: 64,
            dur_kernel: 3,
            pitch_kernel: 5,
            spk_hidden: 64,
            spk_layers: 3,
            gen_channels: 64,
            gen_kernel: 5,
            gen_layers: 4,
            disc_channels: vec![16, 32, 64],
            disc_crop: 64,
        }
    }
}

impl ModelConfig {
    /// Reduced widths for finite-difference checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            n_phonemes: 5,
            feature_dim: 120,
            spk_mels: 40,
            out_mels: 80,
            embed_dim: 8,
            enc_conv_channels: 8,
            enc_hidden: 8,
            enc_att_dim: 8,
            enc_dec_hidden: 8,
            enc_emb_dim: 4,
            enc_loc_kernel: 3,
            pred_channels: 8,
            dur_kernel: 3,
            pitch_kernel: 3,
            spk_hidden: 8,
            spk_layers: 2,
            gen_channels: 8,
            gen_kernel: 3,
            gen_layers: 2,
            disc_channels: vec![4, 4],
            disc_crop: 16,
        }
    }
}
