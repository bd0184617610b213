//! Extended MinP multiple testing.
//!
//! The crate combines a global test p-value with the minimum of individual
//! p-values, calibrates the combination by parametric Monte Carlo, bootstrap
//! or permutation, and runs single-step, stepdown and closed procedures on
//! top of it. [`simlab`] drives Monte Carlo studies of size and power.

pub mod error;
pub mod numcore;
pub mod orthant;
pub mod procedures;
pub mod pvalues;
pub mod resample;
pub mod simlab;

pub use error::{Error, Result};
