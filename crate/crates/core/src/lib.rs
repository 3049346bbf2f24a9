//! Conformal prediction under missing covariates: mask-conditional
//! validity through likelihood-ratio weighting of imputed calibration data.

pub mod config;
pub mod conformal;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod gaussian;
pub mod imputation;
pub mod missingness;
pub mod models;
pub mod pipeline;
pub mod ratio;
pub mod rng;
pub mod stats;
pub mod tabular;

pub use error::{McvError, Result};
pub use tabular::{Dataset, Mask, MaskedSample, PredictionInterval};
