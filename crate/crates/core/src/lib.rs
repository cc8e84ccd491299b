//! Wave-packet revival in hard-wall quantum wells, and its restoration by
//! fluence- and bandwidth-constrained optimal control fields.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod oct;
pub mod propagator;
pub mod spectral;

pub use error::{Error, Result};
