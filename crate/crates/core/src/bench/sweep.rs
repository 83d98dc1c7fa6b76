//! Sweep execution: known-model and sample-based scenario programs across
//! the configured grids, with per-repetition membership and certificate
//! evaluation.

use super::config::ExperimentConfig;
use super::wilson_interval;
use crate::basis::{AdjointEvaluator, BasisKind, BasisSet};
use crate::complexity;
use crate::forward::{
    certify_eps_optimality_batch, horizon_for_tail, value_iteration, Grid, TransitionOperator,
};
use crate::inverse::{
    assemble_sip, assemble_sip_seeded, assemble_sip_sampled, next_state_pools, scenario_points,
    solve_lp, MembershipChecker, ReferencePairings, SolveStatus,
};
use crate::lqg;
use crate::model::{rollout_batch_with_pool, ControlModel, Policy, TrajectoryBatch};
use crate::numeric::quadrature::QuadratureRule;
use crate::numeric::rng::{derive_seed, Stream};
use crate::{Error, Result};
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Known,
    Sampled,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Known => write!(f, "known"),
            Mode::Sampled => write!(f, "sampled"),
        }
    }
}

/// One (cell, repetition) outcome.
#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub mode: Mode,
    pub n_scenarios: usize,
    /// Sample-mode pool size (m = n = k); 0 in known mode.
    pub k_next: usize,
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    pub eps_tilde: f64,
    pub alpha_l1: f64,
    pub beta_l1: f64,
    pub pairing_value: f64,
    pub worst_margin: f64,
    pub lip_row: f64,
    /// Smallest rigorously certified membership level.
    pub certified_level: f64,
    /// Membership verdicts at each probed ε (levels ε̃ + ε).
    pub member: Vec<bool>,
    pub certify_gap: Option<f64>,
    pub certify_threshold: Option<f64>,
    pub certified: Option<bool>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub eps_grid: Vec<f64>,
    pub records: Vec<SweepRecord>,
    /// The guarantee cell size appended when `include_campi_cell` is set.
    pub campi_cell: Option<usize>,
}

/// Shared, expensive per-configuration state.
pub struct BenchContext {
    pub model: Arc<ControlModel>,
    pub cost_set: Arc<BasisSet>,
    pub value_set: Arc<BasisSet>,
    pub refs: ReferencePairings,
    pub joint_quad: QuadratureRule,
    pub adjoint: AdjointEvaluator,
    pub expert: Policy,
    /// Pre-rolled expert trajectories reused by every certificate.
    pub expert_batch: TrajectoryBatch,
    pub checker: MembershipChecker,
    pub op: TransitionOperator,
    pub l_lambda: f64,
    pub campi_cell: Option<usize>,
    pub certify_slack: f64,
    pub vi_tol: f64,
}

fn build_basis(
    name: &str,
    model: &ControlModel,
    theta: f64,
    kind: BasisKind,
) -> Result<BasisSet> {
    match (name, kind) {
        ("lqg_poly_c9", BasisKind::Cost) => lqg::cost_basis(model, theta),
        ("lqg_poly_u3", BasisKind::Value) => lqg::value_basis(model, theta),
        _ => {
            if let Some(deg) = name.strip_prefix("monomials:") {
                let deg: u32 = deg
                    .parse()
                    .map_err(|_| Error::Config(format!("bad monomial degree in {name:?}")))?;
                let (domain, state_dim) = match kind {
                    BasisKind::Cost => {
                        (model.state_box().product(model.action_box()), model.state_box().dim())
                    }
                    BasisKind::Value => (model.state_box().clone(), model.state_box().dim()),
                };
                BasisSet::monomials(&domain, state_dim, deg, theta, kind)
            } else {
                Err(Error::Config(format!("basis {name:?} not available for {kind:?}")))
            }
        }
    }
}

/// Build the shared context: model, bases, references, the fine-grid expert
/// (greedy under the true cost), the membership checker, and the guarantee
/// cell size.
pub fn prepare(cfg: &ExperimentConfig) -> Result<BenchContext> {
    cfg.validate()?;
    let model = Arc::new(lqg::model(&cfg.model)?);
    let cost_set =
        Arc::new(build_basis(&cfg.inverse.cost_basis, &model, cfg.inverse.theta, BasisKind::Cost)?);
    let value_set = Arc::new(build_basis(
        &cfg.inverse.value_basis,
        &model,
        cfg.inverse.theta,
        BasisKind::Value,
    )?);
    let adjoint = AdjointEvaluator::ClosedForm;
    let joint_quad = {
        let joint = model.state_box().product(model.action_box());
        QuadratureRule::tensor(joint.lo(), joint.hi(), 8, 10)?
    };

    // Expert: greedy policy from value iteration under the true cost.
    let grid = Grid::from_model(&model, cfg.forward.grid_nodes, cfg.forward.grid_nodes)?;
    let op = TransitionOperator::build(&model, &grid)?;
    let true_cost = lqg::true_cost(&cfg.model);
    let (_, greedy, _) = value_iteration(&model, true_cost, &op, cfg.forward.vi_tol)?;
    let expert = if cfg.forward.exploration_sigma > 0.0 {
        crate::forward::with_exploration(&model, greedy, cfg.forward.exploration_sigma)?
    } else {
        greedy
    };

    let refs = ReferencePairings::compute(
        &model,
        &expert,
        &cost_set,
        &value_set,
        cfg.reference.tol,
        derive_seed(cfg.seed, Stream::Reference, 0),
    )?;
    let checker = MembershipChecker::new(
        model.clone(),
        cost_set.clone(),
        value_set.clone(),
        &refs,
        cfg.membership.grid_step,
        adjoint.clone(),
    )?;

    let sup_cost = cfg.model.q.max(cfg.model.r) * 2.0 * cfg.model.l * cfg.model.l;
    let horizon = horizon_for_tail(cfg.model.gamma, sup_cost, cfg.forward.value_tail_tol);
    let expert_batch = rollout_batch_with_pool(
        &model,
        &expert,
        cfg.forward.expert_rollouts,
        horizon,
        cfg.forward.expert_rollouts,
        derive_seed(cfg.seed, Stream::PolicyEval, 0),
    )?;

    let lqg_consts = complexity::lqg_constants(
        cfg.model.a,
        cfg.model.b,
        cfg.model.q,
        cfg.model.r,
        cfg.model.mu,
        cfg.model.sigma,
        cfg.model.l,
    )?;
    let inputs = certificate_inputs(cfg, &model, &cost_set, &value_set, lqg_consts.lip_p)?;
    let l_lambda = complexity::constraint_lipschitz(&inputs)?;
    let campi_cell = if cfg.sweep.include_campi_cell {
        let eps_max = cfg
            .membership
            .eps_grid
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let g = complexity::ball_lower_bound_g(eps_max / l_lambda, inputs.d, &inputs.box_sides)?;
        let n = complexity::scenario_size_campi(
            cost_set.len() + value_set.len() + 1,
            g,
            cfg.sweep.campi_delta,
        )?;
        Some(n as usize)
    } else {
        None
    };

    Ok(BenchContext {
        model,
        cost_set,
        value_set,
        refs,
        joint_quad,
        adjoint,
        expert,
        expert_batch,
        checker,
        op,
        l_lambda,
        campi_cell,
        certify_slack: cfg.forward.certify_slack,
        vi_tol: cfg.forward.vi_tol,
    })
}

/// Certificate inputs matching a configuration (basis metadata for the
/// Lipschitz and sup constants, benchmark kernel constants for L_P).
pub fn certificate_inputs(
    cfg: &ExperimentConfig,
    model: &ControlModel,
    cost_set: &BasisSet,
    value_set: &BasisSet,
    lip_p: f64,
) -> Result<complexity::CertificateInputs> {
    let lqg_consts = complexity::lqg_constants(
        cfg.model.a,
        cfg.model.b,
        cfg.model.q,
        cfg.model.r,
        cfg.model.mu,
        cfg.model.sigma,
        cfg.model.l,
    )?;
    let _ = lip_p;
    let joint = model.state_box().product(model.action_box());
    Ok(complexity::CertificateInputs {
        n_c: cost_set.len(),
        n_u: value_set.len(),
        theta: cfg.inverse.theta,
        gamma: cfg.model.gamma,
        lip_c: lqg_consts.lip_c,
        lip_u: value_set.max_lip(),
        lip_p: lqg_consts.lip_p,
        k_c_inf: cost_set.max_sup(),
        k_u_inf: value_set.max_sup(),
        d: joint.dim(),
        box_sides: joint.side_lengths(),
        epsilon: cfg.membership.eps_grid[0],
        delta: cfg.sweep.campi_delta,
    })
}

/// Run the full sweep (known mode plus the sample mode when configured).
/// Solver failures are recorded per cell and never abort the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, ctx: &BenchContext) -> Result<SweepResult> {
    let mut n_cells = cfg.sweep.n_grid.clone();
    if let Some(campi) = ctx.campi_cell {
        if !n_cells.contains(&campi) {
            n_cells.push(campi);
        }
    }
    n_cells.sort_unstable();

    let eps_grid = cfg.membership.eps_grid.clone();
    let reps = cfg.sweep.repetitions;
    let mut records: Vec<SweepRecord> = (0..reps)
        .into_par_iter()
        .map(|rep| known_mode_rep(cfg, ctx, &n_cells, rep))
        .collect::<Result<Vec<Vec<SweepRecord>>>>()?
        .into_iter()
        .flatten()
        .collect();

    if let Some(sm) = &cfg.sample_mode {
        let sampled: Vec<SweepRecord> = (0..sm.repetitions)
            .into_par_iter()
            .map(|rep| sampled_mode_rep(cfg, ctx, sm, rep))
            .collect::<Result<Vec<Vec<SweepRecord>>>>()?
            .into_iter()
            .flatten()
            .collect();
        records.extend(sampled);
    }

    records.sort_by(|a, b| {
        (a.mode as u8, a.n_scenarios, a.k_next, a.rep)
            .cmp(&(b.mode as u8, b.n_scenarios, b.k_next, b.rep))
    });
    Ok(SweepResult { eps_grid, records, campi_cell: ctx.campi_cell })
}

fn known_mode_rep(
    cfg: &ExperimentConfig,
    ctx: &BenchContext,
    n_cells: &[usize],
    rep: usize,
) -> Result<Vec<SweepRecord>> {
    let scenario_seed = derive_seed(cfg.seed, Stream::Sweep, rep as u64);
    let mut out = Vec::with_capacity(n_cells.len());
    for &n in n_cells {
        let started = std::time::Instant::now();
        let certify_here = cfg.sweep.certify_cells.contains(&n) || Some(n) == ctx.campi_cell;
        // Materialize small instances; stream the guarantee-scale ones.
        let assembled = if n <= 65_536 {
            assemble_sip(
                ctx.model.clone(),
                ctx.cost_set.clone(),
                ctx.value_set.clone(),
                &ctx.refs,
                scenario_points(&ctx.model, scenario_seed, n),
                &ctx.joint_quad,
                ctx.adjoint.clone(),
                cfg.inverse.constraint_style,
            )
        } else {
            assemble_sip_seeded(
                ctx.model.clone(),
                ctx.cost_set.clone(),
                ctx.value_set.clone(),
                &ctx.refs,
                scenario_seed,
                n,
                &ctx.joint_quad,
                ctx.adjoint.clone(),
                cfg.inverse.constraint_style,
            )
        };
        let record = match assembled.and_then(|inst| solve_lp(&inst)) {
            Ok(sol) if sol.status == SolveStatus::Optimal => {
                evaluate_solution(cfg, ctx, Mode::Known, n, 0, rep, scenario_seed, &sol, certify_here, started)?
            }
            Ok(sol) => failure_record(Mode::Known, n, 0, rep, scenario_seed, format!("{:?}", sol.status), &cfg.membership.eps_grid, started),
            Err(e) => failure_record(Mode::Known, n, 0, rep, scenario_seed, format!("error: {e}"), &cfg.membership.eps_grid, started),
        };
        out.push(record);
    }
    Ok(out)
}

fn sampled_mode_rep(
    cfg: &ExperimentConfig,
    ctx: &BenchContext,
    sm: &super::config::SampleModeConfig,
    rep: usize,
) -> Result<Vec<SweepRecord>> {
    let rep_seed = derive_seed(cfg.seed ^ 0x5a5a, Stream::Sweep, rep as u64);
    let scenario_seed = derive_seed(rep_seed, Stream::ScenarioPoints, 1);
    let pools_seed = derive_seed(rep_seed, Stream::NextStatePools, 2);
    let batch_seed = derive_seed(rep_seed, Stream::Trajectory, 3);
    let mut out = Vec::new();
    for &k in &sm.k_grid {
        // m = n = k tied; batches nested in k by substream prefixes.
        let batch =
            rollout_batch_with_pool(&ctx.model, &ctx.expert, k, sm.horizon, k, batch_seed)?;
        for &n in &sm.n_grid {
            let started = std::time::Instant::now();
            let points = scenario_points(&ctx.model, scenario_seed, n);
            let record = match next_state_pools(&ctx.model, &points, k, pools_seed)
                .and_then(|pools| {
                    assemble_sip_sampled(
                        ctx.model.clone(),
                        &batch,
                        ctx.cost_set.clone(),
                        ctx.value_set.clone(),
                        points,
                        &pools,
                        &ctx.joint_quad,
                        ctx.adjoint.clone(),
                        cfg.inverse.constraint_style,
                    )
                })
                .and_then(|inst| solve_lp(&inst))
            {
                Ok(sol) if sol.status == SolveStatus::Optimal => {
                    evaluate_solution(cfg, ctx, Mode::Sampled, n, k, rep, rep_seed, &sol, false, started)?
                }
                Ok(sol) => failure_record(Mode::Sampled, n, k, rep, rep_seed, format!("{:?}", sol.status), &cfg.membership.eps_grid, started),
                Err(e) => failure_record(Mode::Sampled, n, k, rep, rep_seed, format!("error: {e}"), &cfg.membership.eps_grid, started),
            };
            out.push(record);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_solution(
    cfg: &ExperimentConfig,
    ctx: &BenchContext,
    mode: Mode,
    n: usize,
    k: usize,
    rep: usize,
    seed: u64,
    sol: &crate::inverse::InverseSolution,
    certify: bool,
    started: std::time::Instant,
) -> Result<SweepRecord> {
    let report = ctx.checker.report(&sol.alpha, &sol.beta);
    let certified_level = report.certified_level();
    let member: Vec<bool> = cfg
        .membership
        .eps_grid
        .iter()
        .map(|eps| report.is_member_at(sol.eps_tilde + eps))
        .collect();

    let (certify_gap, certify_threshold, certified) = if certify {
        let weights = sol.alpha.clone();
        let cost_set = ctx.cost_set.clone();
        let eps_probe = sol.eps_tilde + cfg.membership.eps_grid.last().copied().unwrap_or(0.5);
        let rep = certify_eps_optimality_batch(
            &ctx.model,
            move |x: &[f64], a: &[f64]| {
                cost_set
                    .functions
                    .iter()
                    .zip(&weights)
                    .map(|(f, w)| w * f.eval_pair(x, a))
                    .sum()
            },
            &ctx.expert_batch,
            eps_probe,
            &ctx.op,
            ctx.vi_tol,
            ctx.certify_slack,
        )?;
        (Some(rep.gap), Some(rep.threshold), Some(rep.certified))
    } else {
        (None, None, None)
    };

    Ok(SweepRecord {
        mode,
        n_scenarios: n,
        k_next: k,
        rep,
        seed,
        status: "optimal".into(),
        eps_tilde: sol.eps_tilde,
        alpha_l1: sol.alpha.iter().map(|v| v.abs()).sum(),
        beta_l1: sol.beta.iter().map(|v| v.abs()).sum(),
        pairing_value: report.pairing_value,
        worst_margin: report.worst_margin,
        lip_row: report.lip_row,
        certified_level,
        member,
        certify_gap,
        certify_threshold,
        certified,
        wall_ms: started.elapsed().as_millis(),
    })
}

#[allow(clippy::too_many_arguments)]
fn failure_record(
    mode: Mode,
    n: usize,
    k: usize,
    rep: usize,
    seed: u64,
    status: String,
    eps_grid: &[f64],
    started: std::time::Instant,
) -> SweepRecord {
    SweepRecord {
        mode,
        n_scenarios: n,
        k_next: k,
        rep,
        seed,
        status,
        eps_tilde: f64::NAN,
        alpha_l1: f64::NAN,
        beta_l1: f64::NAN,
        pairing_value: f64::NAN,
        worst_margin: f64::NAN,
        lip_row: f64::NAN,
        certified_level: f64::NAN,
        member: vec![false; eps_grid.len()],
        certify_gap: None,
        certify_threshold: None,
        certified: None,
        wall_ms: started.elapsed().as_millis(),
    }
}

/// Fraction of member verdicts at a probed ε for one cell, with its Wilson
/// 95% interval.
pub fn empirical_confidence(
    result: &SweepResult,
    mode: Mode,
    n: usize,
    k: usize,
    eps: f64,
) -> Result<(f64, f64, f64)> {
    let eps_ix = result
        .eps_grid
        .iter()
        .position(|e| (e - eps).abs() < 1e-12)
        .ok_or_else(|| Error::Domain(format!("ε = {eps} is not in the probed grid")))?;
    let cell: Vec<&SweepRecord> = result
        .records
        .iter()
        .filter(|r| r.mode == mode && r.n_scenarios == n && r.k_next == k)
        .collect();
    if cell.is_empty() {
        return Err(Error::Domain(format!("no records for mode {mode}, N = {n}, k = {k}")));
    }
    let hits = cell.iter().filter(|r| r.member[eps_ix]).count();
    let (lo, hi) = wilson_interval(hits, cell.len());
    Ok((hits as f64 / cell.len() as f64, lo, hi))
}
