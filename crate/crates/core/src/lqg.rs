//! Truncated linear-quadratic-Gaussian benchmark model.
//!
//! One-dimensional linear dynamics `x' = A·x + B·a + ω` with truncated-normal
//! noise on the box `𝒳 = 𝒜 = [-L, L]`, quadratic true cost `Q·x² + R·a²`,
//! monomial value basis `1, x, x²` and the nine-element cost basis
//! `1, x, a, xa, x², a², x²a, xa², x²a²`.
//!
//! The next-state distribution is the parent normal `N(Ax + Ba + μ, σ²)`
//! conditioned on the state box, so the kernel is a proper density on `𝒳`
//! for every (x, a) and the generative sampler keeps states inside the box.
//! For drifts that stay well inside the box (the regime an optimal policy
//! lives in) this coincides with plain truncated noise to within the parent
//! normal's tail mass beyond the box (≈1e-23 for σ = 1, L = 10).

use crate::basis::{BasisFunction, BasisKind, BasisSet};
use crate::model::{BoxDomain, ControlModel, InitialLaw, TransitionKernel};
use crate::Result;

/// Parameters of the truncated LQG benchmark.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LqgParams {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub l: f64,
    pub gamma: f64,
    /// Half-width of the uniform initial law (centered at 0).
    pub initial_half_width: f64,
}

impl LqgParams {
    /// Desk-scale defaults: the benchmark dynamics with γ = 0.9.
    pub fn desk() -> Self {
        Self {
            a: -1.5,
            b: 1.0,
            q: 1.0,
            r: 1.0,
            mu: 0.0,
            sigma: 1.0,
            l: 10.0,
            gamma: 0.9,
            initial_half_width: 2.0,
        }
    }

    /// Long-run scale: γ = 0.99 (roughly 100× the horizon of the desk runs).
    pub fn paper_scale() -> Self {
        Self { gamma: 0.99, ..Self::desk() }
    }
}

/// Build the benchmark control model.
pub fn model(p: &LqgParams) -> Result<ControlModel> {
    let state = BoxDomain::interval(-p.l, p.l)?;
    let action = BoxDomain::interval(-p.l, p.l)?;
    let w = p.initial_half_width.min(p.l);
    let initial = InitialLaw::UniformBox(BoxDomain::interval(-w, w)?);
    let kernel =
        TransitionKernel::TruncatedLinearGaussian { a: p.a, b: p.b, mu: p.mu, sigma: p.sigma };
    let lip_p = crate::complexity::lqg_constants(p.a, p.b, p.q, p.r, p.mu, p.sigma, p.l)?.lip_p;
    ControlModel::new(state, action, p.gamma, initial, kernel, lip_p)
}

/// The nine-element cost basis on 𝒳 × 𝒜.
pub fn cost_basis(model: &ControlModel, theta: f64) -> Result<BasisSet> {
    let domain = model.state_box().product(model.action_box());
    let powers: [[u32; 2]; 9] =
        [[0, 0], [1, 0], [0, 1], [1, 1], [2, 0], [0, 2], [2, 1], [1, 2], [2, 2]];
    let functions = powers
        .iter()
        .map(|p| BasisFunction::monomial(p.to_vec(), &domain, 1))
        .collect::<Result<Vec<_>>>()?;
    BasisSet::new(functions, theta, BasisKind::Cost, domain, 1)
}

/// The value basis 1, x, x² on 𝒳.
pub fn value_basis(model: &ControlModel, theta: f64) -> Result<BasisSet> {
    let domain = model.state_box().clone();
    let functions = (0..3)
        .map(|p| BasisFunction::monomial(vec![p], &domain, 1))
        .collect::<Result<Vec<_>>>()?;
    BasisSet::new(functions, theta, BasisKind::Value, domain, 1)
}

/// The true cost `Q·x² + R·a²` as a closure.
pub fn true_cost(p: &LqgParams) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + Copy {
    let (q, r) = (p.q, p.r);
    move |x: &[f64], a: &[f64]| q * x[0] * x[0] + r * a[0] * a[0]
}

/// Weights of the true cost in the nine-element basis.
pub fn true_cost_weights(p: &LqgParams) -> Vec<f64> {
    let mut w = vec![0.0; 9];
    w[4] = p.q;
    w[5] = p.r;
    w
}

/// Stationary LQR gain of the *untruncated* discounted problem, for
/// cross-checks only: iterates the discounted Riccati recursion to its fixed
/// point and returns K with `a = −K·x`.
pub fn riccati_gain(p: &LqgParams) -> f64 {
    let (a, b, q, r, g) = (p.a, p.b, p.q, p.r, p.gamma);
    let mut pp = q;
    for _ in 0..100_000 {
        let denom = r + g * b * b * pp;
        let next = q + g * a * a * pp - g * g * a * a * b * b * pp * pp / denom;
        if (next - pp).abs() < 1e-14 {
            pp = next;
            break;
        }
        pp = next;
    }
    g * a * b * pp / (r + g * b * b * pp)
}
