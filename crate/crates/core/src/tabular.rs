//! Finite-MDP reduction of the inverse feasibility set, plus brute-force
//! oracles used as ground truth for the continuous machinery.
//!
//! On finite spaces, a cost is inverse feasible for an expert exactly when
//! some value vector `u` satisfies `(c − T*u)(x,a) = 0` wherever the expert
//! puts mass and `≥ 0` elsewhere. The support condition is stated on the
//! policy directly, which coincides with the occupancy-support condition
//! whenever every state has positive discounted mass (in particular when
//! ν₀ > 0 componentwise).

use crate::lp::{feasible_point, LpRow, Relation};
use crate::numeric::linalg::solve_refined;
use crate::{Error, Result};

const TOL: f64 = 1e-8;

/// A finite MDP: transition tensor, discount, initial distribution.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-stochastic tensor, flattened as `p[x][a][y]`.
    pub transition: Vec<f64>,
    pub gamma: f64,
    pub nu0: Vec<f64>,
}

impl FiniteMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        gamma: f64,
        nu0: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::config("finite MDP needs at least one state and action"));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::config("transition tensor has the wrong size"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if nu0.len() != num_states {
            return Err(Error::config("nu0 length must equal the state count"));
        }
        let mdp = Self { num_states, num_actions, transition, gamma, nu0 };
        for x in 0..num_states {
            for a in 0..num_actions {
                let s: f64 = (0..num_states).map(|y| mdp.p(x, a, y)).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!(
                        "transition row ({x},{a}) sums to {s}, not 1"
                    )));
                }
                if (0..num_states).any(|y| mdp.p(x, a, y) < 0.0) {
                    return Err(Error::config(format!("negative probability in row ({x},{a})")));
                }
            }
        }
        let s: f64 = mdp.nu0.iter().sum();
        if (s - 1.0).abs() > 1e-12 || mdp.nu0.iter().any(|v| *v < 0.0) {
            return Err(Error::config("nu0 must be a probability vector"));
        }
        Ok(mdp)
    }

    #[inline]
    pub fn p(&self, x: usize, a: usize, y: usize) -> f64 {
        self.transition[(x * self.num_actions + a) * self.num_states + y]
    }

    /// Load from the CSV trio: flattened transition tensor, nu0, expert
    /// policy matrix. Each file is one float per line or comma-separated.
    pub fn from_csv(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        transition_csv: &str,
        nu0_csv: &str,
    ) -> Result<Self> {
        let transition = parse_floats(transition_csv)?;
        let nu0 = parse_floats(nu0_csv)?;
        Self::new(num_states, num_actions, transition, gamma, nu0)
    }
}

pub fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::config(format!("bad float {t:?} in CSV: {e}")))
        })
        .collect()
}

fn check_policy(mdp: &FiniteMdp, expert: &[f64]) -> Result<()> {
    if expert.len() != mdp.num_states * mdp.num_actions {
        return Err(Error::domain("expert policy matrix has the wrong size"));
    }
    for x in 0..mdp.num_states {
        let row = &expert[x * mdp.num_actions..(x + 1) * mdp.num_actions];
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 || row.iter().any(|v| *v < -1e-12) {
            return Err(Error::domain(format!("expert row {x} is not a probability vector")));
        }
    }
    Ok(())
}

/// LP feasibility of the inverse conditions: does some `u` satisfy
/// `(c − T*u)(x,a) = 0` on the expert's support and `≥ 0` off it?
pub fn tabular_inverse_feasible(mdp: &FiniteMdp, expert: &[f64], cost: &[f64]) -> Result<bool> {
    check_policy(mdp, expert)?;
    if cost.len() != mdp.num_states * mdp.num_actions {
        return Err(Error::domain("cost matrix has the wrong size"));
    }
    // Variables: u = u⁺ − u⁻, both halves nonnegative.
    let nv = 2 * mdp.num_states;
    let mut rows = Vec::with_capacity(mdp.num_states * mdp.num_actions);
    for x in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            // (T*u)(x,a) = u(x) − γ Σ_y P(y|x,a) u(y); row encodes
            // (T*u)(x,a) ⋈ c(x,a) over the split variables.
            let mut coeffs = vec![0.0; nv];
            coeffs[x] += 1.0;
            coeffs[mdp.num_states + x] -= 1.0;
            for y in 0..mdp.num_states {
                let w = mdp.gamma * mdp.p(x, a, y);
                coeffs[y] -= w;
                coeffs[mdp.num_states + y] += w;
            }
            let rel = if expert[x * mdp.num_actions + a] > 1e-12 {
                Relation::Eq // c − T*u = 0 on the support
            } else {
                Relation::Le // c − T*u ≥ 0 off the support, i.e. T*u ≤ c
            };
            rows.push(LpRow { coeffs, rel, rhs: cost[x * mdp.num_actions + a] });
        }
    }
    Ok(feasible_point(nv, &rows, TOL)?.is_some())
}

/// Deterministic-constant-action reduction: with expert ≡ action 0 and a
/// state-only cost, inverse feasibility collapses to
/// `(P_{a₁} − P_a)(I − γ P_{a₁})⁻¹ c ≤ 0` for every other action.
pub fn ng_russell_check(mdp: &FiniteMdp, cost_state: &[f64]) -> Result<bool> {
    if cost_state.len() != mdp.num_states {
        return Err(Error::domain("state cost vector has the wrong size"));
    }
    let n = mdp.num_states;
    // Solve (I − γ P_{a1}) u = c by linear solve; no explicit inverse.
    let mut a_mat = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            a_mat[x * n + y] = if x == y { 1.0 } else { 0.0 } - mdp.gamma * mdp.p(x, 0, y);
        }
    }
    let u = solve_refined(&a_mat, n, cost_state)?;
    for a in 1..mdp.num_actions {
        for x in 0..n {
            let lhs: f64 = (0..n).map(|y| (mdp.p(x, 0, y) - mdp.p(x, a, y)) * u[y]).sum();
            if lhs > TOL {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Exhaustive oracle: the expert is ν₀-optimal iff its exact value matches
/// the minimum over all deterministic stationary policies.
pub fn brute_force_inverse_feasible(
    mdp: &FiniteMdp,
    expert: &[f64],
    cost: &[f64],
) -> Result<bool> {
    check_policy(mdp, expert)?;
    if cost.len() != mdp.num_states * mdp.num_actions {
        return Err(Error::domain("cost matrix has the wrong size"));
    }
    let combos = (mdp.num_actions as u64).checked_pow(mdp.num_states as u32);
    match combos {
        Some(c) if c <= 1_000_000 => {}
        _ => {
            return Err(Error::domain(format!(
                "policy enumeration budget exceeded: {}^{}",
                mdp.num_actions, mdp.num_states
            )))
        }
    }
    let expert_value = nu0_value(mdp, expert, cost)?;

    let n = mdp.num_states;
    let mut best = f64::INFINITY;
    let mut assignment = vec![0usize; n];
    loop {
        // Evaluate the deterministic policy x ↦ assignment[x].
        let mut pol = vec![0.0; n * mdp.num_actions];
        for (x, &a) in assignment.iter().enumerate() {
            pol[x * mdp.num_actions + a] = 1.0;
        }
        let v = nu0_value(mdp, &pol, cost)?;
        best = best.min(v);
        // Odometer.
        let mut d = 0;
        loop {
            if d == n {
                let feasible = expert_value <= best + TOL;
                return Ok(feasible);
            }
            assignment[d] += 1;
            if assignment[d] < mdp.num_actions {
                break;
            }
            assignment[d] = 0;
            d += 1;
        }
    }
}

/// Exact discounted value of a stationary policy at ν₀, by linear solve of
/// `(I − γ P_π) v = c_π`.
pub fn nu0_value(mdp: &FiniteMdp, policy: &[f64], cost: &[f64]) -> Result<f64> {
    let n = mdp.num_states;
    let mut a_mat = vec![0.0; n * n];
    let mut c_pi = vec![0.0; n];
    for x in 0..n {
        for a in 0..mdp.num_actions {
            let w = policy[x * mdp.num_actions + a];
            if w == 0.0 {
                continue;
            }
            c_pi[x] += w * cost[x * mdp.num_actions + a];
            for y in 0..n {
                a_mat[x * n + y] -= mdp.gamma * w * mdp.p(x, a, y);
            }
        }
        a_mat[x * n + x] += 1.0;
    }
    let v = solve_refined(&a_mat, n, &c_pi)?;
    Ok(mdp.nu0.iter().zip(&v).map(|(p, v)| p * v).sum())
}

/// Random instance generator for fuzzing: Dirichlet-ish rows, strictly
/// positive ν₀ (the regime where the support-condition reduction and the
/// brute-force oracle provably coincide).
pub fn random_instance(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    seed: u64,
) -> (FiniteMdp, Vec<f64>, Vec<f64>) {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut transition = vec![0.0; num_states * num_actions * num_states];
    for xa in 0..num_states * num_actions {
        let row = &mut transition[xa * num_states..(xa + 1) * num_states];
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = rng.random_range(0.01f64..1.0);
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    let mut nu0 = vec![0.0; num_states];
    let mut s = 0.0;
    for v in nu0.iter_mut() {
        *v = rng.random_range(0.05f64..1.0);
        s += *v;
    }
    for v in nu0.iter_mut() {
        *v /= s;
    }
    let mdp = FiniteMdp::new(num_states, num_actions, transition, gamma, nu0).unwrap();

    // Expert: deterministic or stochastic at random.
    let mut expert = vec![0.0; num_states * num_actions];
    let stochastic = rng.random_bool(0.4);
    for x in 0..num_states {
        let row = &mut expert[x * num_actions..(x + 1) * num_actions];
        if stochastic {
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.0f64..1.0);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        } else {
            row[rng.random_range(0..num_actions)] = 1.0;
        }
    }
    let cost: Vec<f64> =
        (0..num_states * num_actions).map(|_| rng.random_range(-1.0f64..1.0)).collect();
    (mdp, expert, cost)
}
