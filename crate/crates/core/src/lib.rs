//! Single-channel EEG sleep staging with a multi-scale dual-attention network.
//!
//! The pipeline runs EDF ingestion ([`ingest`]), per-subject normalization and
//! augmentation ([`preprocess`]), the network itself ([`model`]) on a small
//! reverse-mode autograd engine ([`tensor`]), weighted-loss training
//! ([`training`]) and the evaluation metric suite ([`evaluation`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`, which is what the pipeline uses.

pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod preprocess;
pub mod synthetic;
mod scalar;
mod stage;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;
pub use stage::{StageLabel, NUM_STAGES};

pub type Tensor = tensor::Tensor<f64>;
pub type Model = model::Msdan<f64>;
pub type ModelParams = model::ModelParams<f64>;
