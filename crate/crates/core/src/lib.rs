//! Forgetting audits for iterative training algorithms.
//!
//! The crate is organised around the objects a forgetting measurement needs:
//!
//! - [`data`], [`model`], [`train`]: datasets, parameter vectors and a small
//!   per-step SGD trainer with reproducible batch orderings.
//! - [`protocol`]: paired-run measurement (poison-then-remove and
//!   inject-at-a-step) producing [`protocol::ForgettingCurve`]s.
//! - [`attacks`]: calibrated membership inference, threshold metrics and the
//!   canary exposure metric.
//! - [`theory`]: closed forms for SGD mean estimation, including Gaussian
//!   Rényi divergences between injected and non-injected iterates.
//! - [`kmeans`]: Lloyd's algorithm and the two-stage clustering experiment in
//!   which a single outlier is never forgotten.

pub mod attacks;
pub mod data;
pub mod error;
pub mod kmeans;
pub mod model;
pub mod protocol;
pub mod rng;
pub mod stats;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
