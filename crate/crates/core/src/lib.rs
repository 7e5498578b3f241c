//! Magnetoquasistatic finite elements for foil windings.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod circuit;
pub mod cli;
pub mod error;
pub mod fem2d;
pub mod foilwinding;
pub mod linsolve;
pub mod mesh;
pub mod oracle;
pub mod quadrature;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
