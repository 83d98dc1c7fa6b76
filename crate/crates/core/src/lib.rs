//! Cost recovery for discounted Markov decision processes with continuous
//! state and action spaces.
//!
//! Given expert behavior (either exact occupancy expectations or truncated
//! sample trajectories plus a generative transition oracle), this crate
//! assembles finite scenario linear programs whose optimizers yield a cost
//! function for which the expert is near-optimal, together with the
//! sample-complexity certificates that quantify how near.
//!
//! # Module map
//!
//! - [`model`] — continuous MDP models, trajectory generation, and the
//!   empirical/reference pairing estimators for occupancy and initial
//!   measures.
//! - [`basis`] — Lipschitz basis families, quadrature, and the adjoint
//!   Bellman-residual operator `u ↦ u − γPu`.
//! - [`inverse`] — assembly and solution of the scenario inverse programs,
//!   plus ε-inverse-feasibility membership checking.
//! - [`complexity`] — closed-form constants and sample-size calculators
//!   (scenario bounds, Hoeffding pairing bounds, approximation-error bound).
//! - [`forward`] — grid value iteration, Monte Carlo policy evaluation, and
//!   the ε-optimality certificate for recovered costs.
//! - [`tabular`] — finite-MDP reduction of the inverse feasibility set and
//!   brute-force oracles.
//! - [`bench`] — the configuration-driven truncated-LQG experiment harness.
//! - [`lqg`] — the truncated linear-quadratic-Gaussian benchmark model.

pub mod basis;
pub mod bench;
pub mod complexity;
mod error;
pub mod forward;
pub mod inverse;
pub mod lp;
pub mod lqg;
pub mod model;
pub mod numeric;
pub mod tabular;

pub use error::{Error, Result};
