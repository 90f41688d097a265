//! Curriculum-masked autoencoder reconstruction of time–height Doppler
//! velocity fields, Monte Carlo mask-ensemble uncertainty, and the
//! evaluation metrics used to judge both.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the precision used by the command-line pipeline (`f32`)
//! and by gradient checks (`f64`).

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod field_io;
pub mod mae_model;
pub mod mc_inference;
pub mod metrics;
pub mod patching;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Field = field_io::TimeHeightField<f32>;
pub type Field64 = field_io::TimeHeightField<f64>;
pub type Patch = field_io::PatchSample<f32>;
pub type Patch64 = field_io::PatchSample<f64>;
pub type Model = mae_model::MaeModel<f32>;
pub type Model64 = mae_model::MaeModel<f64>;
pub type Trainer = training::Trainer<f32>;
pub type Ensemble = mc_inference::EnsembleResult<f32>;
