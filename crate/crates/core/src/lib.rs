//! Inverse estimation of vessel risk weights from observed speed choices.
//!
//! Vessels are modelled as choosing a speed that minimizes a weighted sum of
//! schedule deviation, whale-strike risk and ice risk. Given observed speeds
//! and covariates, [`estimator::fit`] recovers the per-group weights that make
//! the observed choices closest to optimal.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimator;
pub mod ingest;
pub mod observation;
pub mod optim;
pub mod par;
pub mod risk;
pub mod sample;
pub mod scenarios;
pub mod stats;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
pub use par::ExecMode;
