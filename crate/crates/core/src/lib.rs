//! Smooth transonic flows of the steady Euler-Poisson system in a flat nozzle.
//!
//! The crate builds the one-dimensional accelerating transonic background,
//! certifies admissible parameter windows, and constructs two-dimensional
//! perturbations through a Picard iteration over the Helmholtz-decomposed
//! system: a Poisson problem for the vorticity potential, a degenerate
//! mixed-type system for the potential and electric perturbation solved by
//! cosine Galerkin truncation with vanishing viscosity, and entropy transport
//! along the stream function.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod background1d;
pub mod banded;
pub mod driver;
pub mod error;
pub mod fields;
pub mod mixed_solver;
pub mod par;
pub mod quad;
pub mod regimes;
pub mod transport;

pub use error::{Result, SolverError};
