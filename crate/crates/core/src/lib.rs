//! Subhomogeneous deep equilibrium layers.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod cli;
pub mod deq;
pub mod error;
pub mod graph;
pub mod metric;
pub mod numerics;
pub mod operators;
pub mod solver;

pub use error::{Error, Result};
