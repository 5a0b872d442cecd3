//! Numerical toolkit for null controllability of coupled degenerate
//! parabolic systems
//!
//! ```text
//! Y_t = (D M + A) Y + B v 1_omega,   M u = (a(x) u_x)_x,   x in (0,1),
//! ```
//!
//! where `a(0) = 0`. The crate computes the spectrum of `-M`, runs the
//! per-mode Kalman test on `L_p = -lambda_p D + A`, synthesizes
//! minimum-energy null controls on spectral truncations and verifies them
//! on the full discretized PDE, builds counterexample adjoint
//! trajectories when the Kalman test fails, and evaluates Carleman weights
//! and weighted functionals empirically.

// `!(x > 0.0)` is used on purpose so that NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod carleman;
pub mod config;
pub mod control;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod spectral;
pub mod tridiag;

pub use error::{Error, Result};
