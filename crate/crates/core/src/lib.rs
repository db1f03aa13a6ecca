//! Tikhonov regularization with weighted ℓq penalties, `1 <= q <= 2`.
//!
//! The crate minimizes
//!
//! ```text
//! T(u) = ||F(u) - v||^p + alpha * R_q(u),      R_q(u) = sum_i w_i |u_i|^q
//! ```
//!
//! for linear and differentiable nonlinear forward operators `F`, checks the
//! conditions under which regularized solutions converge to the true solution
//! at a rate (source condition, finite basis injectivity), and runs noise-level
//! sweeps that measure the empirical convergence rate.
//!
//! The basis is orthonormal and implicit: a [`CoefficientVector`] *is* the
//! primal variable, and any synthesis matrix belongs in the forward operator.
//!
//! Modules:
//! - [`penalty`]: the functional `R_q`, subgradients, proximal maps, Bregman distances.
//! - [`operators`]: the [`ForwardOperator`] trait and concrete operators.
//! - [`solver`]: minimizers for `p = 2` (linear and Gauss-Newton) and `p = 1`.
//! - [`analysis`]: source-condition certificates, FBI checks, rate constants and bounds.
//! - [`experiments`]: problem generation, noise, sweeps and slope fitting.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod operators;
pub mod penalty;
pub mod solver;

pub use error::{Error, Result};
pub use operators::ForwardOperator;
pub use penalty::PenaltySpec;

/// Coefficients `<phi_i, u>` of the primal variable in the orthonormal basis.
pub type CoefficientVector = nalgebra::DVector<f64>;

/// An element of the (Euclidean) data space.
pub type DataVector = nalgebra::DVector<f64>;

pub(crate) fn all_finite(v: &nalgebra::DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
