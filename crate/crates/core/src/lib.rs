//! Computation in countable direct limits of finite-dimensional matrix Lie
//! groups.
//!
//! The crate is organised bottom-up:
//!
//! * [`kinf`]: the coefficient space of finitely supported sequences, with
//!   exact level detection and polydisks.
//! * [`mlie`]: the finite-level kernel: matrix exponential and logarithm,
//!   brackets, generated subalgebras, truncated BCH, centers.
//! * [`dirsys`]: direct sequences of groups, algebras and vector spaces;
//!   lifting, limit equality, cones and the injective quotient system.
//! * [`dlgroup`]: limit group arithmetic, the limit exponential map, the
//!   Trotter and commutator formulas and subgroup Lie algebras.
//! * [`evol`]: right product integrals of curves, stitching over the line,
//!   chart partitions and Grönwall perturbation budgets.
//! * [`liethird`]: integration of locally finite Lie algebras, of
//!   homomorphisms and of subalgebras, and complexification.
//! * [`check`]: the executable property suites behind `limlie check`.

pub mod check;
pub mod dirsys;
pub mod dlgroup;
mod error;
pub mod evol;
mod field;
pub mod kinf;
pub mod liethird;
pub mod matrix;
pub mod mlie;
pub mod rng;
pub mod span;

pub use error::{Error, Result};
pub use field::Field;
pub use matrix::Matrix;
pub use num_complex::Complex64;

/// Default entrywise equality tolerance for limit-level comparisons.
pub const EQ_TOL: f64 = 1e-10;
