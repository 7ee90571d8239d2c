//! Benchmark engine for spectral calibration models: data loading,
//! preprocessing, sample partitioning, model search, evaluation and
//! rank statistics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod models;
pub mod preproc;
pub mod report;
pub mod runner;
pub mod sampling;
pub mod search;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
