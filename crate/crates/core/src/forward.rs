//! Forward solver: grid value iteration for the Bellman optimality equation,
//! Monte Carlo policy evaluation, and the ε-optimality certificate that links
//! recovered costs to expert optimality.
//!
//! The continuous expectation inside the Bellman operator is discretized
//! once per model into a dense transition operator (quadrature against the
//! kernel density, multilinear interpolation back onto the grid), so value
//! iteration for different costs on the same model reuses the expensive
//! part. State and action spaces must be one-dimensional here — that covers
//! the benchmark; higher-dimensional grids are out of scope.

use crate::model::{ControlModel, InitialLaw, Policy, TrajectoryBatch};
use crate::numeric::quadrature::Quadrature1d;
use crate::{Error, Result};
use std::sync::Arc;

/// Uniform grid on an interval, endpoints included.
#[derive(Debug, Clone)]
pub struct Grid1d {
    pub nodes: Vec<f64>,
    pub step: f64,
}

impl Grid1d {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) {
            return Err(Error::config("grid needs at least two nodes on a nonempty interval"));
        }
        let step = (hi - lo) / (n - 1) as f64;
        Ok(Self { nodes: (0..n).map(|i| lo + step * i as f64).collect(), step })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index and fractional weight of the cell containing `x` (clamped).
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let lo = self.nodes[0];
        let t = ((x - lo) / self.step).clamp(0.0, (self.len() - 1) as f64);
        let i = (t.floor() as usize).min(self.len() - 2);
        (i, t - i as f64)
    }
}

/// Joint state–action grid for the 1-D forward solver.
#[derive(Debug, Clone)]
pub struct Grid {
    pub states: Grid1d,
    pub actions: Grid1d,
}

impl Grid {
    pub fn from_model(model: &ControlModel, nx: usize, na: usize) -> Result<Self> {
        if model.state_box().dim() != 1 || model.action_box().dim() != 1 {
            return Err(Error::config("the grid solver supports 1-D state and action spaces"));
        }
        Ok(Self {
            states: Grid1d::new(model.state_box().lo()[0], model.state_box().hi()[0], nx)?,
            actions: Grid1d::new(model.action_box().lo()[0], model.action_box().hi()[0], na)?,
        })
    }
}

/// Discretization of the kernel: row (ix, ia) maps grid values to
/// E[V(x') | x_ix, a_ia].
#[derive(Debug, Clone)]
pub struct TransitionOperator {
    grid: Grid,
    /// Row-major weights, rows indexed by ix·na + ia, columns by state node.
    weights: Vec<f64>,
}

impl TransitionOperator {
    /// Quadrature against the kernel density with linear scatter onto the
    /// grid. Row sums land within quadrature tolerance of 1.
    pub fn build(model: &ControlModel, grid: &Grid) -> Result<Self> {
        let nx = grid.states.len();
        let na = grid.actions.len();
        let quad = state_quadrature(model)?;
        let mut weights = vec![0.0; nx * na * nx];
        for (ix, &x) in grid.states.nodes.iter().enumerate() {
            for (ia, &a) in grid.actions.nodes.iter().enumerate() {
                let row = &mut weights[(ix * na + ia) * nx..(ix * na + ia + 1) * nx];
                for (&y, &w) in quad.nodes.iter().zip(&quad.weights) {
                    let p = model.transition_density(&[y], &[x], &[a])?;
                    if p == 0.0 {
                        continue;
                    }
                    let (i, t) = grid.states.locate(y);
                    row[i] += w * p * (1.0 - t);
                    row[i + 1] += w * p * t;
                }
            }
        }
        Ok(Self { grid: grid.clone(), weights })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn row(&self, ix: usize, ia: usize) -> &[f64] {
        let nx = self.grid.states.len();
        let na = self.grid.actions.len();
        &self.weights[(ix * na + ia) * nx..(ix * na + ia + 1) * nx]
    }

    /// E[V(x')] for every grid pair, as a row-major (nx × na) matrix.
    pub fn expected_values(&self, v: &[f64]) -> Vec<f64> {
        let nx = self.grid.states.len();
        let na = self.grid.actions.len();
        let mut out = vec![0.0; nx * na];
        for ix in 0..nx {
            for ia in 0..na {
                out[ix * na + ia] = dot(self.row(ix, ia), v);
            }
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Composite Gauss–Legendre rule over the state interval, sized so kernel
/// boundary layers are resolved.
fn state_quadrature(model: &ControlModel) -> Result<Quadrature1d> {
    let lo = model.state_box().lo()[0];
    let hi = model.state_box().hi()[0];
    let panels = ((hi - lo).ceil() as usize).clamp(8, 64);
    Quadrature1d::composite(lo, hi, 16, panels)
}

/// Piecewise-linear value function on the state grid.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub grid: Grid1d,
    pub values: Vec<f64>,
}

impl ValueFunction {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let (i, t) = self.grid.locate(x);
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Exact average of the piecewise-linear interpolant on [lo, hi].
    pub fn mean_on_interval(&self, lo: f64, hi: f64) -> f64 {
        assert!(lo < hi);
        let mut total = 0.0;
        let n = self.grid.len();
        for i in 0..n - 1 {
            let a = self.grid.nodes[i].max(lo);
            let b = self.grid.nodes[i + 1].min(hi);
            if a >= b {
                continue;
            }
            total += 0.5 * (self.eval(a) + self.eval(b)) * (b - a);
        }
        total / (hi - lo)
    }

    /// Expectation under the model's initial law.
    pub fn mean_under_initial(&self, model: &ControlModel) -> Result<f64> {
        match model.initial_law() {
            InitialLaw::UniformBox(b) => Ok(self.mean_on_interval(b.lo()[0], b.hi()[0])),
            InitialLaw::Custom { .. } => {
                let mut rng = crate::numeric::rng::stream_rng(
                    0xf0,
                    crate::numeric::rng::Stream::PolicyEval,
                    0,
                );
                let n = 200_000;
                let mut s = 0.0;
                for _ in 0..n {
                    let x = model.initial_law().sample(&mut rng);
                    s += self.eval(x[0]);
                }
                Ok(s / n as f64)
            }
        }
    }

    /// CSV export: one `x,value` line per node.
    pub fn export_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "x,value")?;
        for (x, v) in self.grid.nodes.iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ValueIterationStats {
    pub iterations: usize,
    /// Successive sup-norm changes, one per sweep.
    pub deltas: Vec<f64>,
    pub final_delta: f64,
}

const VI_MAX_ITERS: usize = 200_000;

/// Solve the Bellman optimality equation on the grid to sup-error ≤ `tol`.
///
/// Stops when the sweep-to-sweep sup-change is at most `tol·(1−γ)/γ`, which
/// bounds the distance to the discretized fixed point by `tol`. Returns the
/// value function, the greedy policy (argmin over action nodes, lowest index
/// on ties), and the per-sweep contraction record.
pub fn value_iteration(
    model: &ControlModel,
    cost: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    op: &TransitionOperator,
    tol: f64,
) -> Result<(ValueFunction, Policy, ValueIterationStats)> {
    if !(tol > 0.0) {
        return Err(Error::config(format!(
            "value-iteration tolerance must be positive, got {tol}"
        )));
    }
    let gamma = model.gamma();
    let grid = &op.grid;
    let nx = grid.states.len();
    let na = grid.actions.len();

    let mut stage = vec![0.0; nx * na];
    for (ix, &x) in grid.states.nodes.iter().enumerate() {
        for (ia, &a) in grid.actions.nodes.iter().enumerate() {
            let c = cost(&[x], &[a]);
            if !c.is_finite() {
                return Err(Error::numerical(format!("cost evaluated non-finite at ({x}, {a})")));
            }
            stage[ix * na + ia] = c;
        }
    }

    let stop = tol * (1.0 - gamma) / gamma.max(1e-12);
    let mut v = vec![0.0; nx];
    let mut deltas = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > VI_MAX_ITERS {
            return Err(Error::numerical("value iteration exceeded its sweep budget"));
        }
        let mut delta = 0.0f64;
        let mut v_new = vec![0.0; nx];
        for ix in 0..nx {
            let mut best = f64::INFINITY;
            for ia in 0..na {
                let q = stage[ix * na + ia] + gamma * dot(op.row(ix, ia), &v);
                if q < best {
                    best = q;
                }
            }
            v_new[ix] = best;
            delta = delta.max((v_new[ix] - v[ix]).abs());
        }
        v = v_new;
        deltas.push(delta);
        if delta <= stop {
            break;
        }
    }

    let vf = ValueFunction { grid: grid.states.clone(), values: v };
    let policy = greedy_policy(model, cost, op, &vf);
    let final_delta = *deltas.last().unwrap();
    Ok((vf, policy, ValueIterationStats { iterations, deltas, final_delta }))
}

/// Greedy policy w.r.t. a value function on the discretized model: at an
/// arbitrary state the expected values of each action node are interpolated
/// between the surrounding state nodes, and the argmin action node is taken
/// (lowest index on ties).
///
/// The argmin is localized: the per-node greedy indices bracket the search
/// window, and the window expands whenever the minimum lands on its edge,
/// so the result matches a full scan whenever the greedy map has no jumps
/// larger than the window (and a full scan is the final fallback).
pub fn greedy_policy(
    model: &ControlModel,
    cost: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    op: &TransitionOperator,
    vf: &ValueFunction,
) -> Policy {
    let gamma = model.gamma();
    let grid = op.grid.clone();
    let ev = op.expected_values(&vf.values); // nx × na
    let na = grid.actions.len();

    // Exact per-node argmins, computed once.
    let node_argmin: Vec<usize> = (0..grid.states.len())
        .map(|ix| {
            let x = grid.states.nodes[ix];
            let mut best = f64::INFINITY;
            let mut best_j = 0;
            for (ia, &a) in grid.actions.nodes.iter().enumerate() {
                let q = cost(&[x], &[a]) + gamma * ev[ix * na + ia];
                if q < best {
                    best = q;
                    best_j = ia;
                }
            }
            best_j
        })
        .collect();

    let data = Arc::new((grid, ev, node_argmin));
    Policy::deterministic("grid-greedy", move |x: &[f64]| {
        let (grid, ev, node_argmin) = data.as_ref();
        let (i, t) = grid.states.locate(x[0]);
        let q_at = |ia: usize| -> f64 {
            let ev_x = ev[i * na + ia] * (1.0 - t) + ev[(i + 1) * na + ia] * t;
            cost(&[x[0]], &[grid.actions.nodes[ia]]) + gamma * ev_x
        };
        let mut lo = node_argmin[i].min(node_argmin[i + 1]).saturating_sub(2);
        let mut hi = (node_argmin[i].max(node_argmin[i + 1]) + 2).min(na - 1);
        loop {
            let mut best = f64::INFINITY;
            let mut best_j = lo;
            for ia in lo..=hi {
                let q = q_at(ia);
                if q < best {
                    best = q;
                    best_j = ia;
                }
            }
            let full = lo == 0 && hi == na - 1;
            let interior = (best_j > lo || lo == 0) && (best_j < hi || hi == na - 1);
            if full || interior {
                return vec![grid.actions.nodes[best_j]];
            }
            lo = lo.saturating_sub(16);
            hi = (hi + 16).min(na - 1);
        }
    })
}

/// Wrap a deterministic policy with truncated-normal action exploration:
/// the played action is `N(base(x), sigma²)` conditioned on the action box.
pub fn with_exploration(model: &ControlModel, base: Policy, sigma: f64) -> Result<Policy> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("exploration sigma must be positive, got {sigma}")));
    }
    if model.action_box().dim() != 1 {
        return Err(Error::config("action exploration supports 1-D actions"));
    }
    let (lo, hi) = (model.action_box().lo()[0], model.action_box().hi()[0]);
    let name = format!("{}+noise", base.name());
    Ok(Policy::stochastic(name, move |x, rng| {
        let mut a = base.act(x, rng);
        let noisy = crate::numeric::truncnorm::TruncatedNormal::new(a[0], sigma, lo, hi)
            .expect("action box validated at construction")
            .sample(rng);
        a[0] = noisy;
        a
    }))
}

/// Monte Carlo estimate of `V_c^π(ν₀)` from truncated rollouts; deterministic
/// per seed. The caller picks the horizon so the discounted tail is below
/// reporting tolerance.
pub fn policy_value(
    model: &ControlModel,
    cost: impl Fn(&[f64], &[f64]) -> f64,
    policy: &Policy,
    rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let batch = crate::model::rollout_batch(model, policy, rollouts, horizon, seed)?;
    Ok(crate::model::empirical_occupancy_pairing(&batch, cost, model.gamma())?.value)
}

/// Discounted-return average over a pre-rolled batch (pool reuse across
/// many candidate costs).
pub fn policy_value_batch(
    batch: &TrajectoryBatch,
    cost: impl Fn(&[f64], &[f64]) -> f64,
    gamma: f64,
) -> Result<f64> {
    Ok(crate::model::empirical_occupancy_pairing(batch, cost, gamma)?.value)
}

/// Horizon such that `γ^{H+1}·sup/(1−γ) ≤ tail_tol`.
pub fn horizon_for_tail(gamma: f64, sup: f64, tail_tol: f64) -> usize {
    if sup <= 0.0 {
        return 0;
    }
    let target = tail_tol * (1.0 - gamma) / sup;
    ((target.ln() / gamma.ln()).ceil().max(1.0) as usize).saturating_sub(1)
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub rollouts: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Combined numerical slack added to the optimality threshold (grid
    /// bias + Monte Carlo width + value-iteration tolerance).
    pub slack: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyReport {
    pub expert_value: f64,
    pub optimal_value: f64,
    pub gap: f64,
    pub threshold: f64,
    pub certified: bool,
}

/// ε-optimality certificate: the expert's value under `cost` must not exceed
/// the optimal value by more than `(2−γ)/(1−γ)·ε` (plus numerical slack).
pub fn certify_eps_optimality(
    model: &ControlModel,
    cost: impl Fn(&[f64], &[f64]) -> f64 + Clone + Send + Sync + 'static,
    expert: &Policy,
    eps: f64,
    op: &TransitionOperator,
    vi_tol: f64,
    opts: &CertifyOptions,
) -> Result<CertifyReport> {
    if eps < 0.0 {
        return Err(Error::domain(format!("certificate level must be nonnegative, got {eps}")));
    }
    let (vf, _, _) = value_iteration(model, cost.clone(), op, vi_tol)?;
    let optimal_value = vf.mean_under_initial(model)?;
    let expert_value = policy_value(model, cost, expert, opts.rollouts, opts.horizon, opts.seed)?;
    let gap = expert_value - optimal_value;
    let gamma = model.gamma();
    let threshold = (2.0 - gamma) / (1.0 - gamma) * eps + opts.slack;
    Ok(CertifyReport { expert_value, optimal_value, gap, threshold, certified: gap <= threshold })
}

/// Certificate variant evaluating the expert on a pre-rolled batch.
pub fn certify_eps_optimality_batch(
    model: &ControlModel,
    cost: impl Fn(&[f64], &[f64]) -> f64 + Clone + Send + Sync + 'static,
    expert_batch: &TrajectoryBatch,
    eps: f64,
    op: &TransitionOperator,
    vi_tol: f64,
    slack: f64,
) -> Result<CertifyReport> {
    if eps < 0.0 {
        return Err(Error::domain(format!("certificate level must be nonnegative, got {eps}")));
    }
    let (vf, _, _) = value_iteration(model, cost.clone(), op, vi_tol)?;
    let optimal_value = vf.mean_under_initial(model)?;
    let expert_value = policy_value_batch(expert_batch, cost, model.gamma())?;
    let gap = expert_value - optimal_value;
    let gamma = model.gamma();
    let threshold = (2.0 - gamma) / (1.0 - gamma) * eps + slack;
    Ok(CertifyReport { expert_value, optimal_value, gap, threshold, certified: gap <= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg;
    use approx::assert_abs_diff_eq;

    fn small_setup() -> (ControlModel, Grid, TransitionOperator) {
        let model = lqg::model(&lqg::LqgParams::desk()).unwrap();
        let grid = Grid::from_model(&model, 81, 81).unwrap();
        let op = TransitionOperator::build(&model, &grid).unwrap();
        (model, grid, op)
    }

    #[test]
    fn transition_rows_are_stochastic() {
        let (_, _, op) = small_setup();
        for ix in [0, 20, 40, 80] {
            for ia in [0, 40, 80] {
                let s: f64 = op.row(ix, ia).iter().sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn constant_cost_fixed_point() {
        let (model, _, op) = small_setup();
        let (vf, _, stats) = value_iteration(&model, |_, _| 1.0, &op, 1e-6).unwrap();
        for &v in &vf.values {
            assert_abs_diff_eq!(v, 10.0, epsilon = 1e-5);
        }
        // Contraction: successive deltas decay by factor ≤ γ (+ slack).
        for w in stats.deltas.windows(2) {
            assert!(w[1] <= 0.9 * w[0] + 1e-12, "deltas {:?}", w);
        }
    }

    #[test]
    fn zero_cost_zero_value() {
        let (model, _, op) = small_setup();
        let (vf, _, _) = value_iteration(&model, |_, _| 0.0, &op, 1e-8).unwrap();
        assert!(vf.sup_norm() <= 1e-8);
    }

    #[test]
    fn quadratic_cost_shape_and_symmetry() {
        let (model, _, op) = small_setup();
        let p = lqg::LqgParams::desk();
        let cost = lqg::true_cost(&p);
        let (vf, policy, _) = value_iteration(&model, cost, &op, 1e-4).unwrap();
        assert!(vf.eval(0.0) < vf.eval(5.0));
        assert!(vf.eval(0.0) < vf.eval(-5.0));
        let mut rng =
            crate::numeric::rng::stream_rng(0, crate::numeric::rng::Stream::PolicyEval, 0);
        let a0 = policy.act(&[0.0], &mut rng)[0];
        assert_abs_diff_eq!(a0, 0.0, epsilon = 0.3);
        // ‖V‖∞ ≤ ‖c‖∞/(1−γ) + tol.
        assert!(vf.sup_norm() <= 200.0 / 0.1 + 1e-3);
    }

    #[test]
    fn policy_value_constant_cost_is_exact() {
        let (model, _, _) = small_setup();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let v = policy_value(&model, |_, _| 1.0, &policy, 50, 10, 3).unwrap();
        assert_abs_diff_eq!(v, (1.0 - 0.9f64.powi(11)) / 0.1, epsilon = 1e-12);
        let z = policy_value(&model, |_, _| 0.0, &policy, 50, 10, 3).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn greedy_policy_value_matches_value_function() {
        let (model, _, op) = small_setup();
        let p = lqg::LqgParams::desk();
        let cost = lqg::true_cost(&p);
        let (vf, policy, _) = value_iteration(&model, cost, &op, 1e-5).unwrap();
        let expected = vf.mean_under_initial(&model).unwrap();
        let h = horizon_for_tail(0.9, 200.0, 0.005);
        let got = policy_value(&model, cost, &policy, 30_000, h, 17).unwrap();
        // 81-node grid bias ≈ 0.25 plus Monte Carlo width.
        assert_abs_diff_eq!(got, expected, epsilon = 0.4);
    }

    #[test]
    fn certify_optimal_expert() {
        let (model, _, op) = small_setup();
        let p = lqg::LqgParams::desk();
        let cost = lqg::true_cost(&p);
        let (_, greedy, _) = value_iteration(&model, cost, &op, 1e-5).unwrap();
        let opts = CertifyOptions {
            rollouts: 20_000,
            horizon: horizon_for_tail(0.9, 200.0, 0.005),
            seed: 5,
            slack: 0.4,
        };
        let rep = certify_eps_optimality(&model, cost, &greedy, 0.0, &op, 1e-5, &opts).unwrap();
        assert!(rep.certified, "gap {} threshold {}", rep.gap, rep.threshold);
        assert!(rep.gap.abs() <= 0.4);
    }

    #[test]
    fn certify_constant_cost_any_expert() {
        let (model, _, op) = small_setup();
        let expert = Policy::deterministic("edge", |_| vec![7.0]);
        let opts = CertifyOptions { rollouts: 5_000, horizon: 100, seed: 9, slack: 0.05 };
        let rep =
            certify_eps_optimality(&model, |_, _| 3.0, &expert, 0.0, &op, 1e-6, &opts).unwrap();
        assert!(rep.certified);
        assert_abs_diff_eq!(rep.gap, 0.0, epsilon = 0.05);
    }

    #[test]
    fn grid_refinement_consistency() {
        let model = lqg::model(&lqg::LqgParams::desk()).unwrap();
        let p = lqg::LqgParams::desk();
        let cost = lqg::true_cost(&p);
        let mut means = Vec::new();
        for nx in [41usize, 81, 161] {
            let grid = Grid::from_model(&model, nx, nx).unwrap();
            let op = TransitionOperator::build(&model, &grid).unwrap();
            let (vf, _, _) = value_iteration(&model, cost, &op, 1e-5).unwrap();
            means.push(vf.mean_under_initial(&model).unwrap());
        }
        let h = 20.0 / 40.0;
        assert!((means[1] - means[0]).abs() <= 2.0 * h, "{means:?}");
        assert!((means[2] - means[1]).abs() <= 1.0 * h, "{means:?}");
    }
}
