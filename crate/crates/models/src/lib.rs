//! Health-indicator models: Diversity-DeepSAD (semi-supervised) and
//! DTC-VAE (unsupervised), built on a small dense-network engine.

pub mod deepsad;
pub mod dtcvae;
pub mod error;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
pub use model::{ModelKind, ModelNet, TrainedModel, MODEL_FORMAT_VERSION};
