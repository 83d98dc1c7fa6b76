//! Lipschitz basis families and the adjoint Bellman-residual operator.
//!
//! Cost bases live on the joint state–action box, value bases on the state
//! box. Each basis function carries honest sup-norm and Lipschitz metadata
//! (closed form for monomials, grid-estimated and inflated by 5% for custom
//! functions); the sample-complexity certificates consume exactly these
//! constants, so they must be upper bounds, not estimates.
//!
//! Lipschitz constants are with respect to the combined metric
//! `‖x−y‖₂ + ‖a−b‖₂`, which is the metric the kernel Lipschitz constant and
//! the scenario-approach inflation both use.

use crate::model::{BoxDomain, ControlModel};
use crate::numeric::quadrature::QuadratureRule;
use crate::{Error, Result};
use std::sync::Arc;

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum BasisForm {
    /// Product of coordinate powers `Π z_d^{p_d}` over the domain box.
    Monomial(Vec<u32>),
    Custom(Arc<EvalFn>),
}

impl std::fmt::Debug for BasisForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BasisForm::Monomial(p) => f.debug_tuple("Monomial").field(p).finish(),
            BasisForm::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// A basis function with sup-norm and Lipschitz metadata on its box.
#[derive(Debug, Clone)]
pub struct BasisFunction {
    pub form: BasisForm,
    pub lip_const: f64,
    pub sup_norm: f64,
    pub name: String,
}

impl BasisFunction {
    /// Monomial with closed-form metadata: the sup-norm is attained at a
    /// corner, and each block's gradient sup is bounded by endpoint
    /// derivative extrema.
    ///
    /// `state_dim` splits the domain into the (state | action) blocks of the
    /// combined metric; for value bases pass `state_dim = domain.dim()`.
    pub fn monomial(powers: Vec<u32>, domain: &BoxDomain, state_dim: usize) -> Result<Self> {
        if powers.len() != domain.dim() {
            return Err(Error::config("monomial powers must match domain dimension"));
        }
        let m: Vec<f64> =
            domain.lo().iter().zip(domain.hi()).map(|(l, h)| l.abs().max(h.abs())).collect();
        let sup: f64 = m.iter().zip(&powers).map(|(mi, &p)| mi.powi(p as i32)).product();
        // sup |∂_d f| = p_d · m_d^{p_d−1} · Π_{d'≠d} m_{d'}^{p_{d'}}
        let partial_sup = |d: usize| -> f64 {
            let p = powers[d];
            if p == 0 {
                return 0.0;
            }
            let mut v = p as f64 * m[d].powi(p as i32 - 1);
            for (dd, &pp) in powers.iter().enumerate() {
                if dd != d {
                    v *= m[dd].powi(pp as i32);
                }
            }
            v
        };
        let block_norm = |range: std::ops::Range<usize>| -> f64 {
            range.map(|d| partial_sup(d).powi(2)).sum::<f64>().sqrt()
        };
        let lip = block_norm(0..state_dim).max(block_norm(state_dim..domain.dim()));
        let name = monomial_name(&powers, state_dim);
        Ok(Self { form: BasisForm::Monomial(powers), lip_const: lip, sup_norm: sup, name })
    }

    /// Custom basis function; metadata estimated on a dense grid and
    /// inflated by 5%.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        domain: &BoxDomain,
        state_dim: usize,
    ) -> Result<Self> {
        let f = Arc::new(f);
        let (sup, lip) = estimate_metadata(f.as_ref(), domain, state_dim)?;
        Ok(Self {
            form: BasisForm::Custom(f),
            lip_const: lip * 1.05,
            sup_norm: sup * 1.05,
            name: name.into(),
        })
    }

    #[inline]
    pub fn eval(&self, pt: &[f64]) -> f64 {
        match &self.form {
            BasisForm::Monomial(powers) => {
                let mut v = 1.0;
                for (z, &p) in pt.iter().zip(powers) {
                    if p > 0 {
                        v *= z.powi(p as i32);
                    }
                }
                v
            }
            BasisForm::Custom(f) => f(pt),
        }
    }

    /// Evaluate on the virtual concatenation (x ‖ a) without allocating in
    /// the monomial case.
    #[inline]
    pub fn eval_pair(&self, x: &[f64], a: &[f64]) -> f64 {
        match &self.form {
            BasisForm::Monomial(powers) => {
                debug_assert_eq!(powers.len(), x.len() + a.len());
                let mut v = 1.0;
                for (d, &p) in powers.iter().enumerate() {
                    if p > 0 {
                        let z = if d < x.len() { x[d] } else { a[d - x.len()] };
                        v *= z.powi(p as i32);
                    }
                }
                v
            }
            BasisForm::Custom(f) => {
                let mut pt = Vec::with_capacity(x.len() + a.len());
                pt.extend_from_slice(x);
                pt.extend_from_slice(a);
                f(&pt)
            }
        }
    }

    /// True when the function is identically a constant `c` (verifiable for
    /// monomials only).
    pub fn constant_value(&self) -> Option<f64> {
        match &self.form {
            BasisForm::Monomial(p) if p.iter().all(|&q| q == 0) => Some(1.0),
            _ => None,
        }
    }

    /// Highest per-coordinate power, for closed-form moment evaluation.
    pub fn max_degree(&self) -> Option<u32> {
        match &self.form {
            BasisForm::Monomial(p) => p.iter().max().copied(),
            BasisForm::Custom(_) => None,
        }
    }
}

fn monomial_name(powers: &[u32], state_dim: usize) -> String {
    let mut s = String::new();
    for (d, &p) in powers.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let var = if d < state_dim {
            if state_dim == 1 { "x".to_string() } else { format!("x{d}") }
        } else if powers.len() - state_dim == 1 {
            "a".to_string()
        } else {
            format!("a{}", d - state_dim)
        };
        s.push_str(&var);
        if p > 1 {
            s.push_str(&format!("^{p}"));
        }
    }
    if s.is_empty() {
        s.push('1');
    }
    s
}

fn estimate_metadata(
    f: &EvalFn,
    domain: &BoxDomain,
    state_dim: usize,
) -> Result<(f64, f64)> {
    let per_dim = match domain.dim() {
        1 => 4001,
        2 => 201,
        _ => 41,
    };
    let pts = crate::model::grid_points(domain, per_dim);
    let vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("custom basis function evaluated non-finite"));
    }
    let sup = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Difference quotients along each axis of the grid.
    let steps: Vec<f64> =
        domain.side_lengths().iter().map(|s| s / (per_dim - 1) as f64).collect();
    let mut lip = 0.0f64;
    let strides: Vec<usize> = {
        // grid_points iterates last axis fastest.
        let mut s = vec![1usize; domain.dim()];
        for d in (0..domain.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * per_dim;
        }
        s
    };
    for (i, pt) in pts.iter().enumerate() {
        for d in 0..domain.dim() {
            if pt[d] < domain.hi()[d] - steps[d] * 0.5 {
                let j = i + strides[d];
                let dq = (vals[j] - vals[i]).abs() / steps[d];
                lip = lip.max(dq);
            }
        }
    }
    let _ = state_dim;
    Ok((sup, lip))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Cost,
    Value,
}

/// An ordered family of basis functions with an ℓ1 radius θ.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub functions: Vec<BasisFunction>,
    pub theta: f64,
    pub kind: BasisKind,
    pub domain: BoxDomain,
    /// Number of leading domain coordinates that are state coordinates.
    pub state_dim: usize,
}

impl BasisSet {
    pub fn new(
        functions: Vec<BasisFunction>,
        theta: f64,
        kind: BasisKind,
        domain: BoxDomain,
        state_dim: usize,
    ) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::config("basis set needs at least one function"));
        }
        if !(theta > 0.0) {
            return Err(Error::config(format!("ℓ1 radius must be positive, got {theta}")));
        }
        Ok(Self { functions, theta, kind, domain, state_dim })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// K_∞: the largest sup-norm in the family.
    pub fn max_sup(&self) -> f64 {
        self.functions.iter().fold(0.0, |m, f| m.max(f.sup_norm))
    }

    /// The largest Lipschitz constant in the family.
    pub fn max_lip(&self) -> f64 {
        self.functions.iter().fold(0.0, |m, f| m.max(f.lip_const))
    }

    /// Value sets used in inverse programs must lead with u₁ ≡ 1.
    pub fn require_constant_first(&self) -> Result<()> {
        match self.functions[0].constant_value() {
            Some(c) if (c - 1.0).abs() < 1e-12 => Ok(()),
            _ => Err(Error::config(
                "value basis must contain the constant function 1 as its first element",
            )),
        }
    }

    /// Generic monomial family up to `max_degree` per coordinate (graded
    /// lexicographic order, constant first).
    pub fn monomials(
        domain: &BoxDomain,
        state_dim: usize,
        max_total_degree: u32,
        theta: f64,
        kind: BasisKind,
    ) -> Result<Self> {
        let dim = domain.dim();
        let mut all: Vec<Vec<u32>> = vec![vec![]];
        for _ in 0..dim {
            let mut next = Vec::new();
            for base in &all {
                for p in 0..=max_total_degree {
                    let mut b = base.clone();
                    b.push(p);
                    next.push(b);
                }
            }
            all = next;
        }
        let mut all: Vec<Vec<u32>> = all
            .into_iter()
            .filter(|p| p.iter().sum::<u32>() <= max_total_degree)
            .collect();
        all.sort_by_key(|p| (p.iter().sum::<u32>(), p.clone()));
        let functions: Vec<BasisFunction> = all
            .into_iter()
            .map(|p| BasisFunction::monomial(p, domain, state_dim))
            .collect::<Result<_>>()?;
        Self::new(functions, theta, kind, domain.clone(), state_dim)
    }
}

/// How `E[u(x') | x, a]` inside the adjoint operator is evaluated.
#[derive(Debug, Clone)]
pub enum AdjointEvaluator {
    /// Quadrature over the state box against the transition density.
    Quadrature(Arc<QuadratureRule>),
    /// Closed-form next-state moments (monomial value bases over kernels
    /// that expose moments).
    ClosedForm,
}

impl AdjointEvaluator {
    /// (T*u)(x, a) = u(x) − γ E[u(x') | x, a].
    pub fn adjoint(
        &self,
        model: &ControlModel,
        u: &BasisFunction,
        x: &[f64],
        a: &[f64],
    ) -> Result<f64> {
        match self {
            AdjointEvaluator::Quadrature(rule) => adjoint_apply(model, u, x, a, rule),
            AdjointEvaluator::ClosedForm => {
                let deg = u.max_degree().ok_or_else(|| {
                    Error::config("closed-form adjoint needs a monomial value basis")
                })?;
                let moments = model.next_state_moments(deg, x, a).ok_or_else(|| {
                    Error::config("model kernel does not expose closed-form moments")
                })?;
                Ok(u.eval(x) - model.gamma() * moments[deg as usize])
            }
        }
    }

    /// Expectations E[u_j(x')] for a whole value set at once; shares the
    /// moment computation across the family.
    pub fn expectations(
        &self,
        model: &ControlModel,
        value_set: &BasisSet,
        x: &[f64],
        a: &[f64],
    ) -> Result<Vec<f64>> {
        match self {
            AdjointEvaluator::Quadrature(rule) => {
                if rule.dim != model.state_box().dim() {
                    return Err(Error::domain(format!(
                        "quadrature rule dimension {} does not match state dimension {}",
                        rule.dim,
                        model.state_box().dim()
                    )));
                }
                let mut acc = vec![0.0; value_set.len()];
                for (node, w) in rule.nodes.iter().zip(&rule.weights) {
                    let p = model.transition_density(node, x, a)?;
                    if p == 0.0 {
                        continue;
                    }
                    for (j, u) in value_set.functions.iter().enumerate() {
                        acc[j] += w * p * u.eval(node);
                    }
                }
                Ok(acc)
            }
            AdjointEvaluator::ClosedForm => {
                let kmax = value_set
                    .functions
                    .iter()
                    .map(|u| {
                        u.max_degree().ok_or_else(|| {
                            Error::config("closed-form adjoint needs monomial value bases")
                        })
                    })
                    .collect::<Result<Vec<u32>>>()?
                    .into_iter()
                    .max()
                    .unwrap_or(0);
                let moments = model.next_state_moments(kmax, x, a).ok_or_else(|| {
                    Error::config("model kernel does not expose closed-form moments")
                })?;
                Ok(value_set
                    .functions
                    .iter()
                    .map(|u| match &u.form {
                        BasisForm::Monomial(p) => moments[p[0] as usize],
                        BasisForm::Custom(_) => unreachable!("checked above"),
                    })
                    .collect())
            }
        }
    }
}

/// (T*_γ u)(x, a) = u(x) − γ ∫ u(y) P(dy | x, a), by quadrature.
pub fn adjoint_apply(
    model: &ControlModel,
    u: &BasisFunction,
    x: &[f64],
    a: &[f64],
    quad: &QuadratureRule,
) -> Result<f64> {
    if quad.dim != model.state_box().dim() {
        return Err(Error::domain(format!(
            "quadrature rule dimension {} does not match state dimension {}",
            quad.dim,
            model.state_box().dim()
        )));
    }
    let mut expect = 0.0;
    for (node, w) in quad.nodes.iter().zip(&quad.weights) {
        let p = model.transition_density(node, x, a)?;
        if p != 0.0 {
            expect += w * p * u.eval(node);
        }
    }
    Ok(u.eval(x) - model.gamma() * expect)
}

/// Empirical adjoint `T̂*_γ u(x, a) = u(x) − γ (1/k) Σ u(y_i)` from k i.i.d.
/// next-state samples.
///
/// The discount factor multiplies the sample average so that the estimator
/// is unbiased for `T*_γ u`; in particular `u ≡ 1` maps to `1 − γ` exactly,
/// matching the exact adjoint identity.
pub fn adjoint_apply_empirical(
    u: &BasisFunction,
    x: &[f64],
    _a: &[f64],
    next_samples: &[Vec<f64>],
    gamma: f64,
) -> Result<f64> {
    if next_samples.is_empty() {
        return Err(Error::domain("empirical adjoint needs at least one next-state sample"));
    }
    let mean =
        next_samples.iter().map(|y| u.eval(y)).sum::<f64>() / next_samples.len() as f64;
    Ok(u.eval(x) - gamma * mean)
}

/// Coefficients of the normalization constraint `∫ (c − T*_γ u) d(x,a) = 1`
/// as a row over (α, β): `[∫c_i …, −∫T*_γ u_j …]`.
pub fn normalization_row(
    model: &ControlModel,
    cost_set: &BasisSet,
    value_set: &BasisSet,
    joint_quad: &QuadratureRule,
    adjoint: &AdjointEvaluator,
) -> Result<Vec<f64>> {
    if joint_quad.dim != model.joint_dim() {
        return Err(Error::domain(format!(
            "joint quadrature dimension {} does not match state+action dimension {}",
            joint_quad.dim,
            model.joint_dim()
        )));
    }
    let dx = model.state_box().dim();
    let mut row = vec![0.0; cost_set.len() + value_set.len()];
    for (node, w) in joint_quad.nodes.iter().zip(&joint_quad.weights) {
        let (x, a) = node.split_at(dx);
        for (i, c) in cost_set.functions.iter().enumerate() {
            row[i] += w * c.eval(node);
        }
        let gamma = model.gamma();
        let expectations = adjoint.expectations(model, value_set, x, a)?;
        for (j, u) in value_set.functions.iter().enumerate() {
            let t_star = u.eval(x) - gamma * expectations[j];
            row[cost_set.len() + j] -= w * t_star;
        }
    }
    Ok(row)
}

/// Σ w_i f_i(point). Warns (does not reject) when ‖w‖₁ exceeds θ by more
/// than solver slack.
pub fn evaluate_combination(set: &BasisSet, weights: &[f64], point: &[f64]) -> Result<f64> {
    if weights.len() != set.len() {
        return Err(Error::domain(format!(
            "weight vector length {} does not match basis size {}",
            weights.len(),
            set.len()
        )));
    }
    let l1: f64 = weights.iter().map(|w| w.abs()).sum();
    if l1 > set.theta + 1e-8 {
        log::warn!("combination ‖w‖₁ = {l1} exceeds θ = {} beyond solver slack", set.theta);
    }
    Ok(set.functions.iter().zip(weights).map(|(f, w)| w * f.eval(point)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg;
    use crate::numeric::rng::{stream_rng, Stream};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn desk() -> (ControlModel, BasisSet, BasisSet) {
        let p = lqg::LqgParams::desk();
        let model = lqg::model(&p).unwrap();
        let cost = lqg::cost_basis(&model, 1.0).unwrap();
        let value = lqg::value_basis(&model, 1.0).unwrap();
        (model, cost, value)
    }

    fn state_quad(model: &ControlModel) -> QuadratureRule {
        QuadratureRule::tensor(model.state_box().lo(), model.state_box().hi(), 24, 20).unwrap()
    }

    #[test]
    fn lqg_basis_metadata_matches_closed_forms() {
        let (_, cost, value) = desk();
        assert_eq!(cost.len(), 9);
        assert_eq!(value.len(), 3);
        // sup |x² a²| on [-10,10]² = 10⁴.
        assert_relative_eq!(cost.functions[8].sup_norm, 1e4);
        assert_relative_eq!(cost.functions[0].sup_norm, 1.0);
        // Value basis 1, x, x² has Lipschitz constants 0, 1, 20.
        assert_relative_eq!(value.functions[0].lip_const, 0.0);
        assert_relative_eq!(value.functions[1].lip_const, 1.0);
        assert_relative_eq!(value.functions[2].lip_const, 20.0);
        value.require_constant_first().unwrap();
    }

    #[test]
    fn metadata_invariants_hold_on_probe_grid() {
        let (_, cost, _) = desk();
        for f in &cost.functions {
            let pts = crate::model::grid_points(&cost.domain, 21);
            for p in &pts {
                assert!(f.eval(p).abs() <= f.sup_norm * (1.0 + 1e-12));
            }
            // Difference quotients along x at a = const.
            for i in 0..200 {
                let x0 = -10.0 + 0.1 * i as f64;
                let a = 7.3;
                let dq = (f.eval(&[x0 + 1e-5, a]) - f.eval(&[x0, a])).abs() / 1e-5;
                assert!(dq <= f.lip_const * (1.0 + 1e-6) + 1e-9);
            }
        }
    }

    #[test]
    fn adjoint_of_constant_is_one_minus_gamma() {
        let (model, _, value) = desk();
        let quad = state_quad(&model);
        let one = &value.functions[0];
        let mut rng = stream_rng(0, Stream::ScenarioPoints, 0);
        for _ in 0..50 {
            let x = model.state_box().sample_uniform(&mut rng);
            let a = model.action_box().sample_uniform(&mut rng);
            let v = adjoint_apply(&model, one, &x, &a, &quad).unwrap();
            assert_abs_diff_eq!(v, 0.1, epsilon = 1e-10);
        }
    }

    #[test]
    fn adjoint_examples_and_gamma_zero() {
        let (model, _, value) = desk();
        let quad = state_quad(&model);
        // u(x) = x, x = 1, a = 0: 1 − 0.9·E[x'] with E[x'] ≈ −1.5.
        let u = &value.functions[1];
        let v = adjoint_apply(&model, u, &[1.0], &[0.0], &quad).unwrap();
        assert_abs_diff_eq!(v, 2.35, epsilon = 1e-4);
        // γ = 0 behaves as no lookahead. Build a tiny-γ model for the limit.
        let mut p = lqg::LqgParams::desk();
        p.gamma = 1e-12;
        let m0 = lqg::model(&p).unwrap();
        let v0 = adjoint_apply(&m0, u, &[1.0], &[0.0], &quad).unwrap();
        assert_abs_diff_eq!(v0, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn closed_form_adjoint_matches_quadrature() {
        let (model, _, value) = desk();
        let quad = Arc::new(state_quad(&model));
        let q_eval = AdjointEvaluator::Quadrature(quad);
        let c_eval = AdjointEvaluator::ClosedForm;
        let mut rng = stream_rng(3, Stream::ScenarioPoints, 1);
        for _ in 0..25 {
            let x = model.state_box().sample_uniform(&mut rng);
            let a = model.action_box().sample_uniform(&mut rng);
            for u in &value.functions {
                let vq = q_eval.adjoint(&model, u, &x, &a).unwrap();
                let vc = c_eval.adjoint(&model, u, &x, &a).unwrap();
                assert_abs_diff_eq!(vq, vc, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn adjoint_linearity() {
        let (model, _, value) = desk();
        let quad = state_quad(&model);
        let (u1, u2) = (&value.functions[1], &value.functions[2]);
        let combo = BasisFunction::custom(
            "2x-0.3x^2",
            |p: &[f64]| 2.0 * p[0] - 0.3 * p[0] * p[0],
            &model.state_box().clone(),
            1,
        )
        .unwrap();
        let mut rng = stream_rng(4, Stream::ScenarioPoints, 2);
        for _ in 0..20 {
            let x = model.state_box().sample_uniform(&mut rng);
            let a = model.action_box().sample_uniform(&mut rng);
            let lhs = adjoint_apply(&model, &combo, &x, &a, &quad).unwrap();
            let rhs = 2.0 * adjoint_apply(&model, u1, &x, &a, &quad).unwrap()
                - 0.3 * adjoint_apply(&model, u2, &x, &a, &quad).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn empirical_adjoint_examples() {
        let (model, _, value) = desk();
        let one = &value.functions[0];
        let id = &value.functions[1];
        // u ≡ 1: matches the exact adjoint for any samples.
        let v = adjoint_apply_empirical(one, &[0.3], &[0.0], &[vec![1.0], vec![-2.0]], 0.9)
            .unwrap();
        assert_abs_diff_eq!(v, 0.1, epsilon = 1e-15);
        // k = 1 direct formula.
        let v = adjoint_apply_empirical(id, &[2.0], &[0.0], &[vec![0.5]], 0.9).unwrap();
        assert_abs_diff_eq!(v, 1.55, epsilon = 1e-15);
        assert!(adjoint_apply_empirical(id, &[2.0], &[0.0], &[], 0.9).is_err());

        // Large k converges to the exact adjoint within a CLT envelope.
        let quad = state_quad(&model);
        let k = 10_000;
        let mut rng = stream_rng(5, Stream::NextStatePools, 0);
        let samples: Vec<Vec<f64>> =
            (0..k).map(|_| model.sample_transition(&[1.0], &[2.0], &mut rng).unwrap()).collect();
        let emp = adjoint_apply_empirical(id, &[1.0], &[2.0], &samples, 0.9).unwrap();
        let exact = adjoint_apply(&model, id, &[1.0], &[2.0], &quad).unwrap();
        let sigma_bound = 0.9 * 1.0 / (k as f64).sqrt(); // next-state std ≤ ~1
        assert_abs_diff_eq!(emp, exact, epsilon = 4.0 * sigma_bound);
    }

    #[test]
    fn empirical_adjoint_is_unbiased_in_k() {
        // Averaged empirical adjoints over fresh pools approach the exact
        // value; the error shrinks with k rather than drifting.
        let (model, _, value) = desk();
        let quad = state_quad(&model);
        let u = &value.functions[2]; // x²
        let exact = adjoint_apply(&model, u, &[0.5], &[-1.0], &quad).unwrap();
        let mut errs = Vec::new();
        for (i, k) in [100usize, 1000, 10_000].into_iter().enumerate() {
            let reps = 40;
            let mut acc = 0.0;
            let mut rng = stream_rng(6, Stream::NextStatePools, i as u64);
            for _ in 0..reps {
                let samples: Vec<Vec<f64>> = (0..k)
                    .map(|_| model.sample_transition(&[0.5], &[-1.0], &mut rng).unwrap())
                    .collect();
                acc += adjoint_apply_empirical(u, &[0.5], &[-1.0], &samples, 0.9).unwrap();
            }
            errs.push((acc / reps as f64 - exact).abs());
        }
        // Mean over 40 pools of size k has std ~ γ·σ_{u(x')}/√(40k); allow 4σ.
        let sigma_u = 30.0;
        for (err, k) in errs.iter().zip([100.0f64, 1000.0, 10_000.0]) {
            assert!(*err <= 4.0 * 0.9 * sigma_u / (40.0 * k).sqrt(), "err {err} at k={k}");
        }
    }

    #[test]
    fn normalization_row_golden_coefficients() {
        let (model, cost, value) = desk();
        let joint = QuadratureRule::tensor(
            &[-10.0, -10.0],
            &[10.0, 10.0],
            8,
            10,
        )
        .unwrap();
        let row =
            normalization_row(&model, &cost, &value, &joint, &AdjointEvaluator::ClosedForm)
                .unwrap();
        // c₁ ≡ 1 integrates to the box volume.
        assert_abs_diff_eq!(row[0], 400.0, epsilon = 1e-7);
        // c₂ = x integrates to 0 by symmetry.
        assert_abs_diff_eq!(row[1], 0.0, epsilon = 1e-9);
        // u₁ ≡ 1 coefficient: −(1−γ)·leb = −40.
        assert_abs_diff_eq!(row[9], -40.0, epsilon = 1e-7);
    }

    #[test]
    fn normalization_excludes_constant_costs() {
        // A constant cost with its shaping-matched constant value weight has
        // normalization-row value 0.
        let (model, cost, value) = desk();
        let joint = QuadratureRule::tensor(&[-10.0, -10.0], &[10.0, 10.0], 8, 10).unwrap();
        let row =
            normalization_row(&model, &cost, &value, &joint, &AdjointEvaluator::ClosedForm)
                .unwrap();
        let gamma = model.gamma();
        for c in [1.0, -3.0, 42.0] {
            let mut w = vec![0.0; 12];
            w[0] = c; // cost ≡ c
            w[9] = c / (1.0 - gamma); // u ≡ c/(1−γ)
            let v: f64 = row.iter().zip(&w).map(|(r, w)| r * w).sum();
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-6 * c.abs().max(1.0));
        }
    }

    #[test]
    fn combination_examples() {
        let (_, cost, _) = desk();
        let mut w = vec![0.0; 9];
        w[0] = 1.0;
        assert_abs_diff_eq!(
            evaluate_combination(&cost, &w, &[3.0, -4.0]).unwrap(),
            1.0
        );
        // True LQG cost x² + a² at (2,3) = 13.
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        w[5] = 1.0;
        assert_abs_diff_eq!(evaluate_combination(&cost, &w, &[2.0, 3.0]).unwrap(), 13.0);
        assert_abs_diff_eq!(
            evaluate_combination(&cost, &vec![0.0; 9], &[1.0, 1.0]).unwrap(),
            0.0
        );
        assert!(evaluate_combination(&cost, &[1.0], &[0.0, 0.0]).is_err());
    }
}
