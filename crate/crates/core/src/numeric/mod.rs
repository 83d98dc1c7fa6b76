//! Numerical primitives: normal-distribution special functions, truncated
//! normal distributions, Gauss–Legendre quadrature, small dense linear
//! algebra, and deterministic seed derivation.

pub mod linalg;
pub mod normal;
pub mod quadrature;
pub mod rng;
pub mod truncnorm;
