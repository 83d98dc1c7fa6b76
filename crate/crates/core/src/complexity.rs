//! Sample-complexity certificates: scenario sample sizes, the constraint
//! Lipschitz constant, ball-mass lower bounds, Hoeffding pairing bounds, the
//! approximation-error bound, and the benchmark's kernel constants.
//!
//! All logarithms are natural logs. Every calculator returns the ceiling of
//! its closed form; the exact scenario size is computed by stable log-space
//! binomial-tail evaluation plus monotone search rather than by any
//! closed-form surrogate.

use crate::{Error, Result};

/// Inputs shared by the certificate calculators.
#[derive(Debug, Clone)]
pub struct CertificateInputs {
    pub n_c: usize,
    pub n_u: usize,
    pub theta: f64,
    pub gamma: f64,
    pub lip_c: f64,
    pub lip_u: f64,
    pub lip_p: f64,
    pub k_c_inf: f64,
    pub k_u_inf: f64,
    /// Dimension of the joint state–action space.
    pub d: usize,
    /// Side lengths of the joint box (for the uniform-sampling ball bound).
    pub box_sides: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
}

impl CertificateInputs {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("theta", self.theta),
            ("lip_c", self.lip_c),
            ("lip_u", self.lip_u),
            ("lip_p", self.lip_p),
            ("k_c_inf", self.k_c_inf),
            ("k_u_inf", self.k_u_inf),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_c == 0 || self.n_u == 0 || self.d == 0 {
            return Err(Error::config("basis counts and dimension must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        for (name, v) in [("epsilon", self.epsilon), ("delta", self.delta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.box_sides.len() != self.d || self.box_sides.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("box sides must be positive and match the dimension"));
        }
        Ok(())
    }
}

/// log of the binomial tail Σ_{i=0}^{n} C(N,i) ε^i (1−ε)^{N−i}, in log space.
fn log_binomial_tail(big_n: u64, n: usize, eps: f64) -> f64 {
    let ln_eps = eps.ln();
    let ln_1m = (-eps).ln_1p();
    let nf = big_n as f64;
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n.min(big_n as usize) {
        let i_f = i as f64;
        let log_c = libm::lgamma(nf + 1.0) - libm::lgamma(i_f + 1.0) - libm::lgamma(nf - i_f + 1.0);
        terms.push(log_c + i_f * ln_eps + (nf - i_f) * ln_1m);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Minimal N with binomial tail ≤ δ: the exact scenario sample size
/// N(n, ε, δ).
pub fn scenario_size_exact(n: usize, eps: f64, delta: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!(
            "scenario size needs eps, delta in (0,1); got eps={eps}, delta={delta}"
        )));
    }
    // Tiny relative slack so exact ties (tail = δ) resolve to "≤ δ" the way
    // the definition intends, despite lgamma rounding.
    let ln_delta = delta.ln() + 1e-12;
    let ok = |big_n: u64| log_binomial_tail(big_n, n, eps) <= ln_delta;
    // Exponential growth then binary search; the tail is nonincreasing in N.
    let mut hi = (n as u64 + 1).max(1);
    let mut guard = 0;
    while !ok(hi) {
        hi = hi.saturating_mul(2);
        guard += 1;
        if guard > 120 {
            return Err(Error::numerical("scenario size search failed to bracket"));
        }
    }
    let mut lo = n as u64; // tail(N = n) = 1 > delta always
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Closed-form upper bound on the scenario size:
/// `N(n,ε,δ) ≤ (2/ε)·ln(1/δ) + 2n + (2n/ε)·ln(2/ε)`, rounded up.
pub fn scenario_size_campi(n: usize, eps: f64, delta: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!(
            "scenario size needs eps, delta in (0,1); got eps={eps}, delta={delta}"
        )));
    }
    let n = n as f64;
    let v = 2.0 / eps * (1.0 / delta).ln() + 2.0 * n + 2.0 * n / eps * (2.0 / eps).ln();
    Ok(v.ceil() as u64)
}

/// Worst-case (corner) lower bound on the uniform-sampling mass of a
/// radius-r ball in the combined metric: `g(r) = min(1, (r^d / d!) / vol)`.
pub fn ball_lower_bound_g(r: f64, d: usize, box_sides: &[f64]) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("ball radius must be positive, got {r}")));
    }
    if d == 0 || box_sides.len() != d {
        return Err(Error::config("dimension must match box sides"));
    }
    let vol: f64 = box_sides.iter().product();
    let mut simplex = 1.0;
    for k in 1..=d {
        simplex *= r / k as f64;
    }
    Ok((simplex / vol).min(1.0))
}

/// Lipschitz constant of the scenario constraint function:
/// `L_Λ = θ√n_c·L_c + θ√n_u·(L_u·L_P + L_u)`.
pub fn constraint_lipschitz(inp: &CertificateInputs) -> Result<f64> {
    inp.validate()?;
    Ok(inp.theta * (inp.n_c as f64).sqrt() * inp.lip_c
        + inp.theta * (inp.n_u as f64).sqrt() * (inp.lip_u * inp.lip_p + inp.lip_u))
}

/// Sample sizes prescribed for the fully sample-based program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSizes {
    /// Scenario constraint count (exact size at g(ε/L_Λ) and δ/2).
    pub n_scenarios: u64,
    /// Expert trajectories.
    pub m_trajectories: u64,
    /// Initial-state samples.
    pub n_initial: u64,
    /// Next-state draws per scenario point.
    pub k_next: u64,
    /// Truncation horizon.
    pub h_horizon: u64,
}

/// All sample sizes of the sample-based guarantee:
///
/// - `N ≥ N(n_c+n_u+1, g(ε/L_Λ), δ/2)` (exact binomial size),
/// - `m ≥ 8·K_{c,∞}²·θ²·n_c·ln(8n_c/δ) / ((1−γ)²ε²)`,
/// - `n ≥ 8·K_{u,∞}²·θ²·n_u·ln(8n_u/δ) / ε²`,
/// - `k ≥ 8·C·n_u·θ²·ln(4·n_u·N/γ) / ε²` (C from config; unnamed constant),
/// - `H = ⌈(1/(1−γ))·ln(2/ε)⌉`.
pub fn sample_sizes_theorem_bounds(inp: &CertificateInputs, c_const: f64) -> Result<SampleSizes> {
    inp.validate()?;
    if !(c_const > 0.0) {
        return Err(Error::config("the k-bound constant C must be positive"));
    }
    let l_lambda = constraint_lipschitz(inp)?;
    let g = ball_lower_bound_g(inp.epsilon / l_lambda, inp.d, &inp.box_sides)?;
    if g >= 1.0 - 1e-12 {
        return Err(Error::numerical(
            "ball bound saturated at 1; the reliability level is degenerate",
        ));
    }
    let n_scenarios = scenario_size_exact(inp.n_c + inp.n_u + 1, g, inp.delta / 2.0)?;
    let eps2 = inp.epsilon * inp.epsilon;
    let m = 8.0 * inp.k_c_inf.powi(2) * inp.theta.powi(2) * inp.n_c as f64
        * (8.0 * inp.n_c as f64 / inp.delta).ln()
        / ((1.0 - inp.gamma).powi(2) * eps2);
    let n = 8.0 * inp.k_u_inf.powi(2) * inp.theta.powi(2) * inp.n_u as f64
        * (8.0 * inp.n_u as f64 / inp.delta).ln()
        / eps2;
    let k = 8.0 * c_const * inp.n_u as f64 * inp.theta.powi(2)
        * (4.0 * inp.n_u as f64 * n_scenarios as f64 / inp.gamma).ln()
        / eps2;
    let h = (1.0 / (1.0 - inp.gamma)) * (2.0 / inp.epsilon).ln();
    Ok(SampleSizes {
        n_scenarios,
        m_trajectories: m.ceil() as u64,
        n_initial: n.ceil() as u64,
        k_next: k.ceil() as u64,
        h_horizon: h.ceil() as u64,
    })
}

/// The three θ-threshold conditions that appear in the guarantees. They are
/// mutually inconsistent in general; the Lebesgue-based one is the one that
/// provably yields a feasible program (scale u₁ ≡ 1 to meet the
/// normalization row), so it is the one LP assembly enforces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaThresholds {
    /// 1 / ((1−γ)·min{1, d})
    pub min_rule: f64,
    /// 1 / ((1−γ)·leb(𝒳×𝒜)) — enforced for LP assembly.
    pub leb_rule: f64,
    /// 1 / ((1−γ)·d)
    pub dim_rule: f64,
}

pub fn theta_thresholds(gamma: f64, d: usize, leb: f64) -> Result<ThetaThresholds> {
    if !(gamma > 0.0 && gamma < 1.0) || d == 0 || !(leb > 0.0) {
        return Err(Error::config("theta thresholds need γ∈(0,1), d ≥ 1, leb > 0"));
    }
    let one_m = 1.0 - gamma;
    Ok(ThetaThresholds {
        min_rule: 1.0 / (one_m * 1.0f64.min(d as f64)),
        leb_rule: 1.0 / (one_m * leb),
        dim_rule: 1.0 / (one_m * d as f64),
    })
}

/// Approximation-error bound from the projection residuals:
///
/// `ε_approx = ((2−γ)/(1−γ) + D_{γ,θ}·(2+γ)·max{1, L_P, d}) · (res_c + res_u)`
/// with `D_{γ,θ} = 2θ(K_{c,∞}+K_{u,∞}) / ((1−γ)²·min{1,d}·θ + γ − 1)`,
/// valid for `θ > 1/((1−γ)·min{1,d})`.
pub fn eps_approx_bound(inp: &CertificateInputs, residuals: (f64, f64)) -> Result<f64> {
    inp.validate()?;
    let (res_c, res_u) = residuals;
    if res_c < 0.0 || res_u < 0.0 {
        return Err(Error::domain("projection residuals must be nonnegative"));
    }
    let min1d = 1.0f64.min(inp.d as f64);
    let threshold = 1.0 / ((1.0 - inp.gamma) * min1d);
    if inp.theta <= threshold {
        return Err(Error::config(format!(
            "approximation bound requires θ > 1/((1−γ)·min{{1,d}}) = {threshold}, got θ = {}",
            inp.theta
        )));
    }
    let d_const = 2.0 * inp.theta * (inp.k_c_inf + inp.k_u_inf)
        / ((1.0 - inp.gamma).powi(2) * min1d * inp.theta + inp.gamma - 1.0);
    let lead = (2.0 - inp.gamma) / (1.0 - inp.gamma)
        + d_const * (2.0 + inp.gamma) * 1.0f64.max(inp.lip_p).max(inp.d as f64);
    Ok(lead * (res_c + res_u))
}

/// Kernel and cost Lipschitz constants of the truncated LQG benchmark:
///
/// `L_P = 2L·max{|A|,|B|} / (σ²·√(2π)·(Φ((L−μ)/σ) − Φ((−L−μ)/σ)))` and
/// `L_c = max{Q,R}·2L`. Magnitudes are used in `max{A,B}`: the Lipschitz
/// property depends on |A|, and the benchmark's own A is negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqgConstants {
    pub lip_p: f64,
    pub lip_c: f64,
}

pub fn lqg_constants(
    a: f64,
    b: f64,
    q: f64,
    r: f64,
    mu: f64,
    sigma: f64,
    l: f64,
) -> Result<LqgConstants> {
    if !(sigma > 0.0) || !(l > 0.0) {
        return Err(Error::config("lqg constants need σ > 0 and L > 0"));
    }
    let mass = crate::numeric::normal::cdf((l - mu) / sigma)
        - crate::numeric::normal::cdf((-l - mu) / sigma);
    let lip_p = 2.0 * l * a.abs().max(b.abs())
        / (sigma * sigma * (2.0 * std::f64::consts::PI).sqrt() * mass);
    let lip_c = q.max(r) * 2.0 * l;
    Ok(LqgConstants { lip_p, lip_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Direct f64 evaluation of the binomial tail, usable for small N — the
    /// independent oracle for the log-space implementation.
    fn tail_direct(big_n: u64, n: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..=n.min(big_n as usize) {
            let mut c = 1.0f64;
            for k in 0..i {
                c = c * (big_n - k as u64) as f64 / (k + 1) as f64;
            }
            total += c * eps.powi(i as i32) * (1.0 - eps).powi((big_n - i as u64) as i32);
        }
        total
    }

    #[test]
    fn exact_size_golden_values() {
        // Σ_{i≤1} C(N,i)/2^N: N=3 → 0.5 ≤ 0.5; N=2 → 0.75.
        assert_abs_diff_eq!(tail_direct(3, 1, 0.5), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(tail_direct(2, 1, 0.5), 0.75, epsilon = 1e-12);
        assert_eq!(scenario_size_exact(1, 0.5, 0.5).unwrap(), 3);
        // n=0: (1−ε)^N ≤ δ → N = 2 at ε = δ = ... (0.5, 0.25).
        assert_abs_diff_eq!(tail_direct(2, 0, 0.5), 0.25, epsilon = 1e-12);
        assert_eq!(scenario_size_exact(0, 0.5, 0.25).unwrap(), 2);
    }

    #[test]
    fn exact_matches_direct_oracle_on_small_cases() {
        for n in [0usize, 1, 2, 4] {
            for eps in [0.1, 0.3, 0.5] {
                for delta in [0.05, 0.2, 0.5] {
                    let got = scenario_size_exact(n, eps, delta).unwrap();
                    assert!(tail_direct(got, n, eps) <= delta + 1e-12);
                    if got > n as u64 + 1 {
                        assert!(tail_direct(got - 1, n, eps) > delta * (1.0 - 1e-9));
                    }
                }
            }
        }
    }

    #[test]
    fn campi_golden_values() {
        // ⌈20·ln20 + 26 + 260·ln20⌉ = 865.
        assert_eq!(scenario_size_campi(13, 0.1, 0.05).unwrap(), 865);
        // Degenerate inputs: ⌈2·ln2⌉ = 2.
        assert_eq!(scenario_size_campi(0, 1.0 - 1e-9, 0.5).unwrap(), 2);
    }

    #[test]
    fn campi_monotonicity_in_n() {
        let base = scenario_size_campi(5, 0.1, 0.1).unwrap();
        let doubled = scenario_size_campi(10, 0.1, 0.1).unwrap();
        assert!(doubled > 2 * (base - scenario_size_campi(0, 0.1, 0.1).unwrap()));
        assert!(scenario_size_campi(6, 0.1, 0.1).unwrap() > base);
    }

    #[test]
    fn exact_below_campi_on_probe_grid() {
        for n in [1usize, 5, 13] {
            for eps in [0.05, 0.1, 0.3] {
                for delta in [0.01, 0.05, 0.2] {
                    let e = scenario_size_exact(n, eps, delta).unwrap();
                    let c = scenario_size_campi(n, eps, delta).unwrap();
                    assert!(e <= c, "exact {e} > campi {c} at n={n}, eps={eps}, delta={delta}");
                }
            }
        }
    }

    #[test]
    fn exact_size_monotonicities() {
        let base = scenario_size_exact(3, 0.2, 0.1).unwrap();
        assert!(scenario_size_exact(3, 0.3, 0.1).unwrap() <= base);
        assert!(scenario_size_exact(3, 0.2, 0.2).unwrap() <= base);
        assert!(scenario_size_exact(4, 0.2, 0.1).unwrap() >= base);
    }

    #[test]
    fn ball_bound_examples() {
        // d=2, box [-10,10]²: g(2) = (4/2)/400.
        let g = ball_lower_bound_g(2.0, 2, &[20.0, 20.0]).unwrap();
        assert_relative_eq!(g, 0.005);
        // Radius beyond the diameter caps at 1.
        assert_relative_eq!(ball_lower_bound_g(1000.0, 2, &[20.0, 20.0]).unwrap(), 1.0);
        // Strictly increasing on (0, min side).
        let mut prev = 0.0;
        for i in 1..20 {
            let g = ball_lower_bound_g(i as f64, 2, &[20.0, 20.0]).unwrap();
            assert!(g > prev);
            prev = g;
        }
        assert!(ball_lower_bound_g(-1.0, 2, &[20.0, 20.0]).is_err());
    }

    fn lqg_inputs() -> CertificateInputs {
        CertificateInputs {
            n_c: 9,
            n_u: 3,
            theta: 1.0,
            gamma: 0.9,
            lip_c: 20.0,
            lip_u: 20.0,
            lip_p: 11.968268412042980,
            k_c_inf: 1e4,
            k_u_inf: 100.0,
            d: 2,
            box_sides: vec![20.0, 20.0],
            epsilon: 0.1,
            delta: 0.05,
        }
    }

    #[test]
    fn constraint_lipschitz_values() {
        let mut unit = lqg_inputs();
        unit.n_c = 1;
        unit.n_u = 1;
        unit.lip_c = 1.0;
        unit.lip_u = 1.0;
        unit.lip_p = 1.0;
        assert_relative_eq!(constraint_lipschitz(&unit).unwrap(), 3.0);

        let lqg = lqg_inputs();
        let expected = 3.0 * 20.0 + 3.0f64.sqrt() * 20.0 * (11.968268412042980 + 1.0);
        assert_relative_eq!(constraint_lipschitz(&lqg).unwrap(), expected, max_relative = 1e-12);

        // Linear in θ.
        let mut scaled = lqg_inputs();
        scaled.theta = 2.5;
        assert_relative_eq!(
            constraint_lipschitz(&scaled).unwrap(),
            2.5 * expected,
            max_relative = 1e-12
        );
    }

    #[test]
    fn theorem_bound_golden_values() {
        // H = ⌈10 ln 20⌉ = 30 at γ=0.9, ε=0.1.
        let mut inp = lqg_inputs();
        inp.k_u_inf = 1.0;
        inp.k_c_inf = 1.0;
        let sizes = sample_sizes_theorem_bounds(&inp, 1.0).unwrap();
        assert_eq!(sizes.h_horizon, 30);
        // n = ⌈8·3·ln(480)/0.01⌉ = 14818 at K=1, θ=1, n_u=3, δ=0.05, ε=0.1.
        assert_eq!(sizes.n_initial, 14_818);
    }

    #[test]
    fn theorem_bounds_monotone_in_accuracy() {
        let strict = lqg_inputs();
        let mut loose = lqg_inputs();
        loose.epsilon = 0.3;
        let a = sample_sizes_theorem_bounds(&strict, 1.0).unwrap();
        let b = sample_sizes_theorem_bounds(&loose, 1.0).unwrap();
        assert!(b.m_trajectories <= a.m_trajectories);
        assert!(b.n_initial <= a.n_initial);
        assert!(b.n_scenarios <= a.n_scenarios);
        assert!(b.h_horizon <= a.h_horizon);

        let mut looser_delta = lqg_inputs();
        looser_delta.delta = 0.2;
        let c = sample_sizes_theorem_bounds(&looser_delta, 1.0).unwrap();
        assert!(c.m_trajectories <= a.m_trajectories);
        assert!(c.n_scenarios <= a.n_scenarios);
    }

    #[test]
    fn eps_approx_examples() {
        // Zero residuals give a zero bound.
        let mut inp = lqg_inputs();
        inp.theta = 20.0;
        inp.k_c_inf = 1.0;
        inp.k_u_inf = 1.0;
        assert_abs_diff_eq!(eps_approx_bound(&inp, (0.0, 0.0)).unwrap(), 0.0);
        // D = 2·20·2/(0.01·20 − 0.1) = 800 at γ=0.9, θ=20, K=1, d=2.
        let lead = (2.0 - 0.9) / 0.1 + 800.0 * 2.9 * 11.968268412042980;
        assert_relative_eq!(
            eps_approx_bound(&inp, (1.0, 0.0)).unwrap(),
            lead,
            max_relative = 1e-10
        );
        // Below the θ threshold the precondition is reported.
        inp.theta = 5.0;
        let err = eps_approx_bound(&inp, (0.0, 0.0)).unwrap_err();
        assert!(format!("{err}").contains("θ"));
    }

    #[test]
    fn lqg_constants_golden() {
        let c = lqg_constants(-1.5, 1.0, 1.0, 1.0, 0.0, 1.0, 10.0).unwrap();
        assert_relative_eq!(c.lip_c, 20.0);
        assert_relative_eq!(c.lip_p, 11.968268412042980, max_relative = 1e-12);
        // σ → ∞ sends L_P → 0 (≈1.5e-6 at σ = 1e6).
        let wide = lqg_constants(-1.5, 1.0, 1.0, 1.0, 0.0, 1e6, 10.0).unwrap();
        assert!(wide.lip_p < 1e-5);
    }

    #[test]
    fn thresholds_ordering_for_lqg() {
        let t = theta_thresholds(0.9, 2, 400.0).unwrap();
        assert_relative_eq!(t.min_rule, 10.0);
        assert_relative_eq!(t.leb_rule, 0.025);
        assert_relative_eq!(t.dim_rule, 5.0);
    }
}
