//! Staggered-grid variable-coefficient Stokes operators, multigrid and
//! block preconditioners for GMRES.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod multigrid;
pub mod operators;
pub mod precond;
pub mod problems;
pub mod schur;
pub mod spectrum;

pub use error::{Result, StokesError};
