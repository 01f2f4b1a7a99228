//! Ground states, thresholds and penalized semiclassical solves for weakly
//! coupled two-component nonlinear Schrodinger systems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod limit;
pub mod linalg;
mod newton;
pub mod penalty;
pub mod semiclassical;
pub mod thresholds;

pub use error::{Error, Result};
pub use grid::{BoxGrid, FieldPair, Grid, ProblemParams, RadialGrid, ScalarField};
