//! Command-line driver for the `polykin` kinetics library: scenario files,
//! artifact writing, parameter sweeps and the acceptance bundles.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod error;
pub mod scenario;
pub mod verify;

pub use error::CliError;
