//! Structured-grid solver for second boundary value problems of singular
//! fourth-order Abreu equations in two dimensions, together with a brute-force
//! convexity-constrained minimizer that serves as an independent check.

// `!(x > 0.0)` style guards deliberately reject NaN; stencil loops index
// several parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod abreu;
pub mod config;
pub mod error;
pub mod grid;
pub mod lagrangian;
pub mod linalg;
pub mod lma;
pub mod monge_ampere;
pub mod oracle;
pub mod runner;
pub mod selftest;

pub use error::{Error, Result};
