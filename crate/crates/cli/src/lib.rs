//! Command-line pipeline: design, simulate, build the objective image, train
//! the VAE, fit the latent surrogate, validate, infer and report, each as a
//! restartable stage recorded in a JSON manifest.

pub mod config;
pub mod design;
pub mod error;
pub mod manifest;
pub mod stages;
pub mod svg;

pub use config::RunConfig;
pub use error::PipelineError;
pub use stages::{Pipeline, StageKind, StageOutcome};
