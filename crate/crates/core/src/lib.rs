//! Dictionary-free parameter estimation with kernel regression.
//!
//! Estimators are trained on parameter/measurement pairs simulated from a
//! signal model and a prior, then applied voxel by voxel to magnitude images.
//! The crate also contains the signal models themselves, an isochromat
//! simulator used to validate them, a grid-search baseline, estimator
//! analysis (Fisher information and closed-form conditional moments) and
//! synthetic phantoms.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod estimator;
pub mod holdout;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod phantom;
pub mod pipeline;
pub mod prior;
pub mod rng;
pub mod signal;
pub mod util;
pub mod vpm;

pub use error::{Error, Result};
