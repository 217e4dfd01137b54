//! Dysarthric speech reconstruction with adversarial speaker adaptation,
//! at desk scale.

pub mod asa;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod phoneme;
pub mod pipeline;
pub mod training;

pub use error::{DsrError, Result};
