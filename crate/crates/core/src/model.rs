//! Continuous MDP models, trajectory generation, and pairing estimators.
//!
//! A [`ControlModel`] is the tuple (state box, action box, transition law,
//! discount, initial law) — everything except the cost, which is the object
//! being recovered. The transition law is exposed three ways: a density, a
//! generative sampler, and (when available) closed-form polynomial moments
//! of the next state, so that `E[u(x')]` is exact for polynomial `u`.
//!
//! Pairing estimators approximate the duality brackets `⟨μ^π, f⟩` (discounted
//! occupancy expectation) and `⟨ν₀, u⟩` (initial expectation), either from a
//! stored [`TrajectoryBatch`] or as tolerance-certified Monte Carlo
//! references.

use crate::numeric::rng::{derive_seed, stream_rng, Stream};
use crate::numeric::truncnorm::TruncatedNormal;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

/// Axis-aligned box, the domain of states or actions.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("box bounds must have matching nonzero dimension"));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l <= h) || !l.is_finite() || !h.is_finite() {
                return Err(Error::config(format!("empty or non-finite box side [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// 1-D interval.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }

    /// Cartesian product of two boxes (state × action).
    pub fn product(&self, other: &BoxDomain) -> BoxDomain {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        BoxDomain { lo, hi }
    }
}

type DensityFn = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync;
type SamplerFn = dyn Fn(&[f64], &[f64], &mut ChaCha8Rng) -> Vec<f64> + Send + Sync;

/// Transition law of the controlled process.
#[derive(Clone)]
pub enum TransitionKernel {
    /// One-dimensional linear drift with additive noise, re-truncated to the
    /// state box: `x' ~ N(a·x + b·u + mu, sigma²)` conditioned on the box.
    /// The conditioning makes the density integrate to 1 over the state box
    /// for every (x, a) and keeps the sampler inside the box by
    /// construction.
    TruncatedLinearGaussian { a: f64, b: f64, mu: f64, sigma: f64 },
    /// Arbitrary kernel given by a density over the state box and a
    /// generative sampler.
    Custom { density: Arc<DensityFn>, sampler: Arc<SamplerFn> },
}

impl std::fmt::Debug for TransitionKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransitionKernel::TruncatedLinearGaussian { a, b, mu, sigma } => f
                .debug_struct("TruncatedLinearGaussian")
                .field("a", a)
                .field("b", b)
                .field("mu", mu)
                .field("sigma", sigma)
                .finish(),
            TransitionKernel::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

type StateSamplerFn = dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync;

/// Initial state distribution ν₀.
#[derive(Clone)]
pub enum InitialLaw {
    /// Uniform over a sub-box of the state box.
    UniformBox(BoxDomain),
    Custom { sampler: Arc<StateSamplerFn> },
}

impl std::fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialLaw::UniformBox(b) => f.debug_tuple("UniformBox").field(b).finish(),
            InitialLaw::Custom { .. } => f.write_str("Custom(..)"),
        }
    }
}

impl InitialLaw {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            InitialLaw::UniformBox(b) => b.sample_uniform(rng),
            InitialLaw::Custom { sampler } => sampler(rng),
        }
    }
}

/// Continuous discounted MDP without a cost function.
#[derive(Debug, Clone)]
pub struct ControlModel {
    state_box: BoxDomain,
    action_box: BoxDomain,
    gamma: f64,
    initial_law: InitialLaw,
    kernel: TransitionKernel,
    lip_p: f64,
}

impl ControlModel {
    pub fn new(
        state_box: BoxDomain,
        action_box: BoxDomain,
        gamma: f64,
        initial_law: InitialLaw,
        kernel: TransitionKernel,
        lip_p: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!("discount factor must lie in (0,1), got {gamma}")));
        }
        if !(lip_p >= 0.0) {
            return Err(Error::config(format!("kernel Lipschitz constant must be ≥ 0, got {lip_p}")));
        }
        if let TransitionKernel::TruncatedLinearGaussian { .. } = kernel {
            if state_box.dim() != 1 || action_box.dim() != 1 {
                return Err(Error::config(
                    "TruncatedLinearGaussian kernel requires 1-D state and action",
                ));
            }
        }
        Ok(Self { state_box, action_box, gamma, initial_law, kernel, lip_p })
    }

    pub fn state_box(&self) -> &BoxDomain {
        &self.state_box
    }

    pub fn action_box(&self) -> &BoxDomain {
        &self.action_box
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.initial_law
    }

    pub fn lip_p(&self) -> f64 {
        self.lip_p
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    /// Dimension of the joint state–action space.
    pub fn joint_dim(&self) -> usize {
        self.state_box.dim() + self.action_box.dim()
    }

    fn check_pair(&self, x: &[f64], a: &[f64]) -> Result<()> {
        if !self.state_box.contains(x, 1e-9) {
            return Err(Error::domain(format!("state {x:?} outside the state box")));
        }
        if !self.action_box.contains(a, 1e-9) {
            return Err(Error::domain(format!("action {a:?} outside the action box")));
        }
        Ok(())
    }

    fn trunc_next(&self, a: f64, b: f64, mu: f64, sigma: f64, x: &[f64], u: &[f64]) -> TruncatedNormal {
        let mean = a * x[0] + b * u[0] + mu;
        TruncatedNormal::new(mean, sigma, self.state_box.lo[0], self.state_box.hi[0])
            .expect("state box validated at construction")
    }

    /// Draw a next state from P(·|x, a).
    pub fn sample_transition(&self, x: &[f64], a: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.check_pair(x, a)?;
        let y = match &self.kernel {
            TransitionKernel::TruncatedLinearGaussian { a: am, b, mu, sigma } => {
                vec![self.trunc_next(*am, *b, *mu, *sigma, x, a).sample(rng)]
            }
            TransitionKernel::Custom { sampler, .. } => sampler(x, a, rng),
        };
        if !self.state_box.contains(&y, 1e-9) {
            return Err(Error::numerical(format!("sampler produced out-of-box state {y:?}")));
        }
        Ok(y)
    }

    /// Density of P(·|x, a) at y; zero outside the kernel support.
    pub fn transition_density(&self, y: &[f64], x: &[f64], a: &[f64]) -> Result<f64> {
        self.check_pair(x, a)?;
        if y.len() != self.state_box.dim() {
            return Err(Error::domain("next state has wrong dimension"));
        }
        Ok(match &self.kernel {
            TransitionKernel::TruncatedLinearGaussian { a: am, b, mu, sigma } => {
                self.trunc_next(*am, *b, *mu, *sigma, x, a).pdf(y[0])
            }
            TransitionKernel::Custom { density, .. } => density(y, x, a),
        })
    }

    /// E[(x')ᵏ | x, a] in closed form when the kernel supports it (1-D
    /// truncated linear Gaussian). `None` for custom kernels.
    pub fn next_state_moment(&self, k: u32, x: &[f64], a: &[f64]) -> Option<f64> {
        self.next_state_moments(k, x, a).map(|m| m[k as usize])
    }

    /// E[(x')⁰], …, E[(x')ᵏᵐᵃˣ] in closed form when the kernel supports it.
    pub fn next_state_moments(&self, kmax: u32, x: &[f64], a: &[f64]) -> Option<Vec<f64>> {
        match &self.kernel {
            TransitionKernel::TruncatedLinearGaussian { a: am, b, mu, sigma } => {
                Some(self.trunc_next(*am, *b, *mu, *sigma, x, a).moments_upto(kmax))
            }
            TransitionKernel::Custom { .. } => None,
        }
    }

    /// Stable fingerprint of the model parameters, used to tie exported
    /// artifacts back to the model that produced them.
    pub fn fingerprint(&self) -> String {
        let kernel = match &self.kernel {
            TransitionKernel::TruncatedLinearGaussian { a, b, mu, sigma } => {
                format!("tlg:{a:e},{b:e},{mu:e},{sigma:e}")
            }
            TransitionKernel::Custom { .. } => "custom".to_string(),
        };
        let initial = match &self.initial_law {
            InitialLaw::UniformBox(b) => format!("uniform:{:?}/{:?}", b.lo, b.hi),
            InitialLaw::Custom { .. } => "custom".to_string(),
        };
        let payload = format!(
            "state:{:?}/{:?};action:{:?}/{:?};gamma:{:e};lip_p:{:e};kernel:{kernel};initial:{initial}",
            self.state_box.lo, self.state_box.hi, self.action_box.lo, self.action_box.hi,
            self.gamma, self.lip_p,
        );
        let mut h = Sha256::new();
        h.update(payload.as_bytes());
        hex_prefix(&h.finalize(), 16)
    }
}

pub(crate) fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

type ActFn = dyn Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    DeterministicMap,
    StochasticKernel,
}

/// Stationary Markov policy.
#[derive(Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    act: Arc<ActFn>,
    name: String,
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Policy({}, {:?})", self.name, self.kind)
    }
}

impl Policy {
    pub fn deterministic(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: PolicyKind::DeterministicMap,
            act: Arc::new(move |x, _| f(x)),
            name: name.into(),
        }
    }

    pub fn stochastic(
        name: impl Into<String>,
        f: impl Fn(&[f64], &mut ChaCha8Rng) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { kind: PolicyKind::StochasticKernel, act: Arc::new(f), name: name.into() }
    }

    pub fn act(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        (self.act)(x, rng)
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// A batch of truncated expert rollouts plus an initial-state sample pool.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    /// `m` trajectories, each a sequence of H+1 state–action pairs.
    pub trajectories: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    pub horizon: usize,
    /// Samples from ν₀ (independent of the trajectories).
    pub initial_samples: Vec<Vec<f64>>,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    fn validate(&self) -> Result<()> {
        for t in &self.trajectories {
            if t.len() != self.horizon + 1 {
                return Err(Error::domain(format!(
                    "trajectory length {} does not match horizon {}",
                    t.len(),
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

/// What a pairing estimate approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingKind {
    Occupancy,
    Initial,
}

/// A scalar estimate of a duality bracket, with provenance.
#[derive(Debug, Clone, Copy)]
pub struct PairingEstimate {
    pub value: f64,
    pub kind: PairingKind,
    /// Sample variance of the per-replication values, when meaningful.
    pub variance_hint: Option<f64>,
}

/// Roll out `m` truncated trajectories of horizon `h` under `policy`.
///
/// Trajectory `i` draws from the sub-stream (seed, Trajectory, i) and the
/// initial pool from (seed, InitialSamples, i), so batches are bitwise
/// reproducible and independent of evaluation order.
pub fn rollout_batch(
    model: &ControlModel,
    policy: &Policy,
    m: usize,
    h: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    rollout_batch_with_pool(model, policy, m, h, m, seed)
}

/// As [`rollout_batch`] but with an initial-state pool of size `n` decoupled
/// from the trajectory count.
pub fn rollout_batch_with_pool(
    model: &ControlModel,
    policy: &Policy,
    m: usize,
    h: usize,
    n: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if m == 0 {
        return Err(Error::domain("rollout batch needs at least one trajectory"));
    }
    let mut trajectories = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = stream_rng(seed, Stream::Trajectory, i as u64);
        let mut x = model.initial_law.sample(&mut rng);
        let mut traj = Vec::with_capacity(h + 1);
        for t in 0..=h {
            let a = policy.act(&x, &mut rng);
            if !model.action_box.contains(&a, 1e-9) {
                return Err(Error::domain(format!("policy produced out-of-box action {a:?}")));
            }
            traj.push((x.clone(), a.clone()));
            if t < h {
                x = model.sample_transition(&x, &a, &mut rng)?;
            }
        }
        trajectories.push(traj);
    }
    let mut initial_samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, Stream::InitialSamples, i as u64);
        initial_samples.push(model.initial_law.sample(&mut rng));
    }
    let batch = TrajectoryBatch { trajectories, horizon: h, initial_samples, seed };
    batch.validate()?;
    Ok(batch)
}

/// Sample-average approximation of the occupancy pairing:
/// `(1/m) Σ_j Σ_{t≤H} γᵗ f(x_t^j, a_t^j)`.
pub fn empirical_occupancy_pairing(
    batch: &TrajectoryBatch,
    f: impl Fn(&[f64], &[f64]) -> f64,
    gamma: f64,
) -> Result<PairingEstimate> {
    if batch.trajectories.is_empty() {
        return Err(Error::domain("empty trajectory batch"));
    }
    batch.validate()?;
    let m = batch.trajectories.len() as f64;
    let mut per_traj = Vec::with_capacity(batch.trajectories.len());
    for traj in &batch.trajectories {
        let mut disc = 1.0;
        let mut s = 0.0;
        for (x, a) in traj {
            s += disc * f(x, a);
            disc *= gamma;
        }
        per_traj.push(s);
    }
    let mean = per_traj.iter().sum::<f64>() / m;
    let var = if per_traj.len() > 1 {
        Some(per_traj.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0))
    } else {
        None
    };
    Ok(PairingEstimate { value: mean, kind: PairingKind::Occupancy, variance_hint: var })
}

/// Sample-average approximation of the initial pairing `(1/n) Σ u(x₀^k)`.
pub fn empirical_initial_pairing(
    batch: &TrajectoryBatch,
    u: impl Fn(&[f64]) -> f64,
) -> Result<PairingEstimate> {
    if batch.initial_samples.is_empty() {
        return Err(Error::domain("empty initial-state pool"));
    }
    let n = batch.initial_samples.len() as f64;
    let vals: Vec<f64> = batch.initial_samples.iter().map(|x| u(x)).collect();
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        Some(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    } else {
        None
    };
    Ok(PairingEstimate { value: mean, kind: PairingKind::Initial, variance_hint: var })
}

/// Hard caps for the certified reference estimator.
const REFERENCE_SUP_CAP: f64 = 1e12;
const REFERENCE_MAX_TRAJECTORIES: usize = 1 << 26;
const REFERENCE_PILOT: usize = 2048;

/// Tolerance-certified Monte Carlo reference for `⟨μ^π, f⟩`.
///
/// The truncation horizon is chosen so the discounted tail is below `tol/2`
/// (using a grid estimate of sup|f|), and the replication count so the 95%
/// CI half-width is below `tol/2`. Budgets are split 50/50 between the two
/// error sources.
pub fn reference_occupancy_pairing(
    model: &ControlModel,
    policy: &Policy,
    f: impl Fn(&[f64], &[f64]) -> f64 + Sync,
    tol: f64,
    seed: u64,
) -> Result<PairingEstimate> {
    if !(tol > 0.0) {
        return Err(Error::config(format!("reference tolerance must be positive, got {tol}")));
    }
    let gamma = model.gamma;
    let sup = probe_sup(model, &f)?;
    // gamma^{H+1} * sup / (1-gamma) <= tol/2
    let h = if sup == 0.0 {
        0
    } else {
        let target = tol * 0.5 * (1.0 - gamma) / sup;
        ((target.ln() / gamma.ln()).ceil().max(1.0) as usize).saturating_sub(1)
    };

    let half_width_target = tol * 0.5;
    let mut sums: Vec<f64> = Vec::with_capacity(REFERENCE_PILOT);
    let mut next_index = 0u64;
    let run_batch = |count: usize, sums: &mut Vec<f64>, next_index: &mut u64| -> Result<()> {
        for _ in 0..count {
            let mut rng = stream_rng(seed, Stream::Reference, *next_index);
            *next_index += 1;
            let mut x = model.initial_law.sample(&mut rng);
            let mut disc = 1.0;
            let mut s = 0.0;
            for t in 0..=h {
                let a = policy.act(&x, &mut rng);
                s += disc * f(&x, &a);
                disc *= gamma;
                if t < h {
                    x = model.sample_transition(&x, &a, &mut rng)?;
                }
            }
            sums.push(s);
        }
        Ok(())
    };

    run_batch(REFERENCE_PILOT, &mut sums, &mut next_index)?;
    loop {
        let n = sums.len() as f64;
        let mean = sums.iter().sum::<f64>() / n;
        let var = sums.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let half = 1.96 * (var / n).sqrt();
        if half <= half_width_target {
            return Ok(PairingEstimate {
                value: mean,
                kind: PairingKind::Occupancy,
                variance_hint: Some(var),
            });
        }
        let needed = ((1.96 * 1.96 * var) / (half_width_target * half_width_target)).ceil() as usize;
        if needed > REFERENCE_MAX_TRAJECTORIES {
            return Err(Error::numerical(format!(
                "reference pairing needs ~{needed} trajectories for tol {tol}, above the budget cap"
            )));
        }
        let extra = (needed - sums.len()).max(sums.len()); // at least double
        run_batch(extra, &mut sums, &mut next_index)?;
    }
}

/// Reference for `⟨ν₀, u⟩`: exact quadrature for uniform initial laws,
/// certified Monte Carlo otherwise.
pub fn reference_initial_pairing(
    model: &ControlModel,
    u: impl Fn(&[f64]) -> f64 + Sync,
    tol: f64,
    seed: u64,
) -> Result<PairingEstimate> {
    match &model.initial_law {
        InitialLaw::UniformBox(b) => {
            let rule =
                crate::numeric::quadrature::QuadratureRule::tensor(b.lo(), b.hi(), 16, 8)?;
            let vol = b.volume();
            let value = rule.integrate(|x| u(x)) / vol;
            Ok(PairingEstimate { value, kind: PairingKind::Initial, variance_hint: Some(0.0) })
        }
        InitialLaw::Custom { .. } => {
            if !(tol > 0.0) {
                return Err(Error::config("reference tolerance must be positive"));
            }
            let mut vals = Vec::with_capacity(REFERENCE_PILOT);
            let mut idx = 0u64;
            loop {
                let take = if vals.is_empty() { REFERENCE_PILOT } else { vals.len() };
                for _ in 0..take {
                    let mut rng = stream_rng(seed, Stream::Reference, idx);
                    idx += 1;
                    let x = model.initial_law.sample(&mut rng);
                    vals.push(u(&x));
                }
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                if 1.96 * (var / n).sqrt() <= tol * 0.5 {
                    return Ok(PairingEstimate {
                        value: mean,
                        kind: PairingKind::Initial,
                        variance_hint: Some(var),
                    });
                }
                if vals.len() > REFERENCE_MAX_TRAJECTORIES {
                    return Err(Error::numerical("initial pairing budget exceeded"));
                }
            }
        }
    }
}

/// Estimate sup |f| over the joint box on a coarse grid; errors out on
/// non-finite or absurdly large probes.
fn probe_sup(model: &ControlModel, f: &(impl Fn(&[f64], &[f64]) -> f64 + Sync)) -> Result<f64> {
    let per_dim = 33usize;
    let xs = grid_points(model.state_box(), per_dim);
    let aus = grid_points(model.action_box(), per_dim);
    let mut sup = 0.0f64;
    for x in &xs {
        for a in &aus {
            let v = f(x, a).abs();
            if !v.is_finite() || v > REFERENCE_SUP_CAP {
                return Err(Error::domain(format!(
                    "function probe at ({x:?}, {a:?}) gave {v}, beyond the reference cap"
                )));
            }
            sup = sup.max(v);
        }
    }
    Ok(sup)
}

/// Uniform grid over a box with `per_dim` points per axis (corners included).
pub fn grid_points(b: &BoxDomain, per_dim: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = b
        .lo()
        .iter()
        .zip(b.hi())
        .map(|(&l, &h)| {
            if per_dim == 1 {
                vec![0.5 * (l + h)]
            } else {
                (0..per_dim).map(|i| l + (h - l) * i as f64 / (per_dim - 1) as f64).collect()
            }
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    loop {
        out.push(idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect());
        let mut d = axes.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

impl TrajectoryBatch {
    /// Write the batch as CSV (`traj_id, t, x…, a…`) plus a `.meta.toml`
    /// sidecar carrying (seed, H, m, model hash).
    pub fn export_csv(&self, path: &Path, model: &ControlModel) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dx = model.state_box().dim();
        let da = model.action_box().dim();
        let mut header = String::from("traj_id,t");
        for i in 0..dx {
            header.push_str(&format!(",x{i}"));
        }
        for i in 0..da {
            header.push_str(&format!(",a{i}"));
        }
        writeln!(w, "{header}")?;
        for (j, traj) in self.trajectories.iter().enumerate() {
            for (t, (x, a)) in traj.iter().enumerate() {
                let xs: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
                let asv: Vec<String> = a.iter().map(|v| format!("{v}")).collect();
                writeln!(w, "{j},{t},{},{}", xs.join(","), asv.join(","))?;
            }
        }
        w.flush()?;
        let meta = format!(
            "seed = {}\nhorizon = {}\ntrajectories = {}\ninitial_samples = {}\nmodel_hash = \"{}\"\n",
            self.seed,
            self.horizon,
            self.trajectories.len(),
            self.initial_samples.len(),
            model.fingerprint()
        );
        std::fs::write(path.with_extension("meta.toml"), meta)?;
        Ok(())
    }
}

/// Derive the per-scenario-point sub-seed for next-state pools.
pub fn pool_seed(seed: u64, point_index: u64) -> u64 {
    derive_seed(seed, Stream::NextStatePools, point_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqg;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn desk_model() -> ControlModel {
        lqg::model(&lqg::LqgParams::desk()).unwrap()
    }

    #[test]
    fn noiseless_limit_recovers_drift() {
        let mut p = lqg::LqgParams::desk();
        p.sigma = 1e-8;
        let model = lqg::model(&p).unwrap();
        let mut rng = stream_rng(0, Stream::Trajectory, 0);
        let y = model.sample_transition(&[1.0], &[0.0], &mut rng).unwrap();
        // y ≈ A·x + B·a = -1.5 to six decimals.
        assert_abs_diff_eq!(y[0], -1.5, epsilon = 1e-6);
    }

    #[test]
    fn symmetric_noise_has_zero_mean_at_origin() {
        let model = desk_model();
        let mut rng = stream_rng(1, Stream::Trajectory, 0);
        let n = 100_000;
        let mut s = 0.0;
        for _ in 0..n {
            s += model.sample_transition(&[0.0], &[0.0], &mut rng).unwrap()[0];
        }
        // Monte Carlo CI oracle: mean within ±0.02 of 0 (σ=1, n=1e5 → 3σ/√n ≈ 0.0095).
        assert_abs_diff_eq!(s / n as f64, 0.0, epsilon = 0.02);
    }

    #[test]
    fn samples_always_inside_state_box() {
        let model = desk_model();
        let mut rng = stream_rng(2, Stream::Trajectory, 0);
        // Stress the corner with the largest drift.
        for (x, a) in [(0.0, 0.0), (10.0, -10.0), (-10.0, 10.0), (7.0, 7.0)] {
            for _ in 0..250_000 {
                let y = model.sample_transition(&[x], &[a], &mut rng).unwrap();
                assert!((-10.0..=10.0).contains(&y[0]), "escaped box: {}", y[0]);
            }
        }
    }

    #[test]
    fn density_examples() {
        let model = desk_model();
        // At y = Ax + Ba with mu=0, sigma=1, L=10 the drift is interior and the
        // window is effectively [-10σ, 10σ]: value φ(0)/(Φ(10)−Φ(−10)).
        let (x, a) = (1.0, 0.0);
        let y = -1.5 * x + 1.0 * a;
        let got = model.transition_density(&[y], &[x], &[a]).unwrap();
        assert_relative_eq!(got, 0.398_942_280_401_432_7, max_relative = 1e-6);
        // Offsets beyond the noise half-width L have zero density.
        let got = model.transition_density(&[6.0], &[2.0], &[-2.0]).unwrap();
        // y − (Ax+Ba) = 6 − (−5) = 11 > 10.
        assert!(got <= 1e-20, "density {got} should vanish beyond the window");
    }

    #[test]
    fn density_integrates_to_one_by_adaptive_oracle() {
        // Independent oracle: adaptive-ish fine Simpson on [-10, 10].
        let model = desk_model();
        let f = |y: f64| model.transition_density(&[y], &[1.0], &[2.0]).unwrap();
        let n = 400_000;
        let h = 20.0 / n as f64;
        let mut s = f(-10.0) + f(10.0);
        for i in 1..n {
            let y = -10.0 + i as f64 * h;
            s += if i % 2 == 1 { 4.0 * f(y) } else { 2.0 * f(y) };
        }
        let integral = s * h / 3.0;
        assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn density_normalizes_on_probe_grid() {
        // ∫ p(·|x,a) = 1 ± 1e-6 on a 5×5 grid of (x, a), corners included.
        let model = desk_model();
        let q = crate::numeric::quadrature::Quadrature1d::composite(-10.0, 10.0, 24, 20).unwrap();
        for x in [-10.0, -5.0, 0.0, 5.0, 10.0] {
            for a in [-10.0, -5.0, 0.0, 5.0, 10.0] {
                let integral =
                    q.integrate(|y| model.transition_density(&[y], &[x], &[a]).unwrap());
                assert_abs_diff_eq!(integral, 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn rollouts_are_deterministic_and_shaped() {
        let model = desk_model();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let b1 = rollout_batch(&model, &policy, 3, 0, 99).unwrap();
        assert_eq!(b1.trajectories.len(), 3);
        assert!(b1.trajectories.iter().all(|t| t.len() == 1));
        let b2 = rollout_batch(&model, &policy, 3, 0, 99).unwrap();
        assert_eq!(format!("{:?}", b1.trajectories), format!("{:?}", b2.trajectories));

        let b3 = rollout_batch(&model, &policy, 3, 5, 100).unwrap();
        assert_ne!(format!("{:?}", b1.initial_samples), format!("{:?}", b3.initial_samples));
    }

    #[test]
    fn occupancy_pairing_of_one_is_geometric_sum() {
        let model = desk_model();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let batch = rollout_batch(&model, &policy, 37, 10, 5).unwrap();
        let est = empirical_occupancy_pairing(&batch, |_, _| 1.0, 0.9).unwrap();
        // (1 − 0.9^11)/0.1, independent of the trajectories.
        assert_relative_eq!(est.value, 6.861_894_039_1, max_relative = 1e-12);
        let zero = empirical_occupancy_pairing(&batch, |_, _| 0.0, 0.9).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn occupancy_pairing_linearity() {
        let model = desk_model();
        let policy = Policy::deterministic("half", |x| vec![(0.3 * x[0]).clamp(-10.0, 10.0)]);
        let batch = rollout_batch(&model, &policy, 50, 12, 6).unwrap();
        let f = |x: &[f64], _: &[f64]| x[0];
        let g = |_: &[f64], a: &[f64]| a[0] * a[0];
        let pf = empirical_occupancy_pairing(&batch, f, 0.9).unwrap().value;
        let pg = empirical_occupancy_pairing(&batch, g, 0.9).unwrap().value;
        let combo =
            empirical_occupancy_pairing(&batch, |x, a| 2.0 * f(x, a) - 3.0 * g(x, a), 0.9)
                .unwrap()
                .value;
        assert_relative_eq!(combo, 2.0 * pf - 3.0 * pg, max_relative = 1e-12);
    }

    #[test]
    fn initial_pairing_examples() {
        let model = desk_model();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let batch = rollout_batch(&model, &policy, 2, 0, 7).unwrap();
        assert_eq!(empirical_initial_pairing(&batch, |_| 1.0).unwrap().value, 1.0);

        let single = TrajectoryBatch {
            trajectories: vec![vec![(vec![2.0], vec![0.0])]],
            horizon: 0,
            initial_samples: vec![vec![2.0]],
            seed: 0,
        };
        assert_eq!(empirical_initial_pairing(&single, |x| x[0] * x[0]).unwrap().value, 4.0);

        // Symmetric ν₀ ⇒ mean ≈ 0 (Monte Carlo CI oracle at n = 1e5).
        let big = rollout_batch_with_pool(&model, &policy, 1, 0, 100_000, 11).unwrap();
        let est = empirical_initial_pairing(&big, |x| x[0]).unwrap();
        assert_abs_diff_eq!(est.value, 0.0, epsilon = 0.05);
    }

    #[test]
    fn reference_pairing_of_constants() {
        let model = desk_model();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let tol = 0.05;
        let r1 = reference_occupancy_pairing(&model, &policy, |_, _| 1.0, tol, 3).unwrap();
        assert_abs_diff_eq!(r1.value, 10.0, epsilon = tol); // 1/(1−γ)
        let rc = reference_occupancy_pairing(&model, &policy, |_, _| -2.5, tol, 3).unwrap();
        assert_abs_diff_eq!(rc.value, -25.0, epsilon = tol);
    }

    #[test]
    fn reference_rejects_unbounded_probe() {
        let model = desk_model();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let err = reference_occupancy_pairing(
            &model,
            &policy,
            |x, _| if x[0].abs() > 9.99 { f64::INFINITY } else { 0.0 },
            0.1,
            0,
        );
        assert!(err.is_err());
    }

    #[test]
    fn csv_export_round_trip_shape() {
        let model = desk_model();
        let policy = Policy::deterministic("zero", |_| vec![0.0]);
        let batch = rollout_batch(&model, &policy, 2, 3, 13).unwrap();
        let dir = std::env::temp_dir().join("irl_core_batch_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("batch.csv");
        batch.export_csv(&path, &model).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "traj_id,t,x0,a0");
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(dir.join("batch.meta.toml").exists());
    }
}
