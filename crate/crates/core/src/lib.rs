//! Quality-of-service limits for stabilizing nonlinear maps over
//! multiplicative (erasure) channels.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: discrete-time maps with analytic Jacobians (the Lorentz
//!   testbed, its saturated variant, LTI systems) and a finite-difference
//!   Jacobian oracle.
//! - [`channel`]: the multiplicative channel scalar and additive noise, with
//!   replayable per-replica random streams.
//! - [`lyapunov`]: Lyapunov spectrum, maximum exponent and determinant-sum
//!   estimators.
//! - [`riccati`]: DARE solver, trajectory Riccati recursion, optimal tangent
//!   gain and the sufficient stability test.
//! - [`limits`]: critical non-erasure probabilities from origin eigenvalues
//!   and Lyapunov exponents.
//! - [`simulate`]: closed-loop and master/slave Monte Carlo ensembles and the
//!   linearized covariance recursion.

pub mod channel;
pub mod dynamics;
mod error;
pub mod limits;
pub mod linalg;
pub mod lyapunov;
pub mod riccati;
pub mod simulate;

pub use error::{Error, Result};

/// State vectors.
pub type State = nalgebra::DVector<f64>;
/// Dense real matrices.
pub type Matrix = nalgebra::DMatrix<f64>;
