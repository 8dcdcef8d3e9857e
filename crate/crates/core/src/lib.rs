//! Battery-aware task and charging planning for autonomous mobile robots.
//!
//! The crate fits linear degradation coefficients from a cycling and
//! calendar aging model, builds a mixed-integer program that trades
//! degradation against task lateness, solves it with its own
//! branch-and-bound, and evaluates decisions against the exact nonlinear
//! schedule under sampled uncertainty.

// Bounds are validated with negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod robust;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
