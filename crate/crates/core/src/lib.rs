//! Latent-space pressure prediction: datasets, the autoencoder, the latent
//! predictor, hybrid simulation and evaluation.

pub mod autoencoder;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod latent_sim;
pub mod predictor;
pub mod scene;

pub use error::{CoreError, Result};
