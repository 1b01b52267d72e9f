//! GPR-aided rover localization: trace conditioning, synthetic radargrams,
//! a transformer displacement regressor, EKF fusion and trajectory metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the double-precision instantiation used by the command-line tools.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod fusion;
pub mod model;
pub mod scalar;
pub mod signal;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Trace = signal::Trace<f64>;
pub type BScan = signal::BScan<f64>;

pub type EkfState = fusion::EkfState<f64>;
pub type Measurement = fusion::Measurement<f64>;
pub type ModelParams = model::ModelParams<f64>;
