//! Optimal-transport formulation of the continuous-time Kyle model.

// `!(x > 0.0)` rejects NaN as well; grid stencils read clearer indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod grid;
pub mod heat;
pub mod linalg;
pub mod lognormal;
pub mod potential;
pub mod risk;
pub mod sim;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
