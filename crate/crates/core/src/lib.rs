//! Core building blocks for extracting health indicators (HIs) from
//! run-to-failure guided-wave datasets.
//!
//! The crate covers everything that does not involve training a network:
//!
//! - [`data`]: dataset schema, leave-one-out folds and normalizers
//! - [`dataset`]: on-disk manifest and waveform payload formats
//! - [`sigproc`]: FFT, STFT, Hilbert analytic signal and EMD
//! - [`features`]: the multi-domain statistical feature set and its ranking
//! - [`criteria`]: monotonicity, prognosability, trendability and fitness
//! - [`ensemble`]: seed averaging and fitness-weighted frequency fusion
//! - [`hyperopt`]: Gaussian-process Bayesian optimisation
//! - [`synthgen`]: synthetic degradation datasets with known ground truth

pub mod criteria;
pub mod data;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod hyperopt;
pub mod linalg;
pub mod sigproc;
pub mod synthgen;

pub use error::{Error, Result};
