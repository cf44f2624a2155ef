//! Spectral cut-off estimation for ill-posed sequence models with a
//! data-driven stopping rule.
//!
//! The crate covers the full pipeline: singular-value layouts
//! ([`spectrum::Spectrum`]), synthetic solutions and noisy observations
//! ([`model`]), the discretized discrepancy stopping rule
//! ([`discrepancy`]), closed-form rate and cut-off oracles ([`theory`]),
//! and reproducible Monte Carlo experiments ([`experiment`]). A binary
//! target exposes the same operations on the command line.

pub mod discrepancy;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod kahan;
pub mod model;
pub mod spectrum;
pub mod theory;

pub use error::{Error, Result};
