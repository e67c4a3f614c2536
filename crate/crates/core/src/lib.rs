//! Partial inverse design of concrete mixes.
//!
//! A denoising autoencoder completes the free design variables of a mix
//! given the fixed ones and a target strength, while a frozen strength
//! surrogate grades those completions during training. A Gaussian-process
//! surrogate sampled by Metropolis-Hastings serves as the baseline.

pub mod checkpoint;
pub mod cooperative;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gp;
pub mod imputation;
pub mod nn;
pub mod rng;
pub mod runs;
pub mod surrogate;
pub mod training;

pub use error::{Error, ErrorClass, Result};
