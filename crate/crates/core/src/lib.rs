//! Distribution-shift detection between image corpora.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`corpus`]: manifest loading, dynamic-range normalization, resampling.
//! - [`scattering`]: Morlet filter bank and summed wavelet scattering invariants.
//! - [`embedding`]: whitening + 2-component PCA, binned densities, overlap, OOD selection.
//! - [`mmd`]: RBF kernel, unbiased block MMD and the B-test.
//! - [`eval`]: label merging, threshold metrics, AUC, abstention, adaptation reports.
//!
//! [`cli`] wires the stages into the `shiftscan` binary.

pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod mmd;
pub mod rng;
pub mod scattering;

pub use error::{Error, Result};
pub use matrix::FeatureMatrix;
