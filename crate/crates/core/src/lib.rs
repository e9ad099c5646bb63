//! Free-space optical link simulation and turbulence-level classification.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gbt;
pub mod metrics;
pub mod modem;
pub mod monitor;
pub mod preset;
pub mod rng;

pub use error::{Error, Result};
