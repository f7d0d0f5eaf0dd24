//! Desk-scale recognizer: patch-transformer encoder, label embedder with a
//! pad vector, and two decoders (linear head over fused tokens, and an
//! autoregressive transformer decoder).

mod batch;
mod bundle;
mod config;
pub mod layers;

use thiserror::Error;

pub use batch::Batch;
pub use bundle::{gradient_check, InjectionMode, ModelBundle, CHECKPOINT_FILE, MODEL_CONFIG_FILE};
pub use config::{DecoderKind, ModelConfig};

use crate::datagen::DatagenError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
