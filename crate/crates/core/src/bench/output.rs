//! CSV and plot emission for sweep results.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! are byte-stable for identical inputs; the wall-time column is the only
//! nondeterministic field and sits last so it can be sliced off when
//! comparing runs.

use super::config::ExperimentConfig;
use super::plot::{line_plot, Series};
use super::sweep::{BenchContext, Mode, SweepRecord, SweepResult};
use super::wilson_interval;
use crate::complexity;
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Write records.csv, aggregate.csv, theory.csv, run_meta.toml and the four
/// plots into `dir`. Returns the list of files written.
pub fn emit_outputs(
    result: &SweepResult,
    cfg: &ExperimentConfig,
    ctx: &BenchContext,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let records = dir.join("records.csv");
    write_records(&records, result)?;
    written.push(records);

    let aggregate = dir.join("aggregate.csv");
    write_aggregate(&aggregate, result)?;
    written.push(aggregate);

    let theory = dir.join("theory.csv");
    write_theory(&theory, cfg, ctx)?;
    written.push(theory);

    let meta = dir.join("run_meta.toml");
    write_meta(&meta, cfg, ctx)?;
    written.push(meta);

    if !result.records.is_empty() {
        written.extend(write_plots(dir, result, cfg, ctx)?);
    }
    Ok(written)
}

fn member_headers(eps_grid: &[f64]) -> String {
    eps_grid.iter().map(|e| format!(",member_eps_{e}")).collect()
}

fn write_records(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "mode,n_scenarios,k_next,rep,seed,status,eps_tilde,alpha_l1,beta_l1,pairing_value,\
         worst_margin,lip_row,certified_level{},certify_gap,certify_threshold,certified,wall_ms",
        member_headers(&result.eps_grid)
    )?;
    for r in &result.records {
        let members: String =
            r.member.iter().map(|m| format!(",{}", if *m { 1 } else { 0 })).collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}{},{},{},{},{}",
            r.mode,
            r.n_scenarios,
            r.k_next,
            r.rep,
            r.seed,
            r.status,
            r.eps_tilde,
            r.alpha_l1,
            r.beta_l1,
            r.pairing_value,
            r.worst_margin,
            r.lip_row,
            r.certified_level,
            members,
            r.certify_gap.map_or(String::new(), |v| v.to_string()),
            r.certify_threshold.map_or(String::new(), |v| v.to_string()),
            r.certified.map_or(String::new(), |v| (v as u8).to_string()),
            r.wall_ms,
        )?;
    }
    Ok(())
}

/// Cells of a result, in record order.
fn cells(result: &SweepResult) -> Vec<(Mode, usize, usize)> {
    let mut cells = Vec::new();
    for r in &result.records {
        let key = (r.mode, r.n_scenarios, r.k_next);
        if !cells.contains(&key) {
            cells.push(key);
        }
    }
    cells
}

fn cell_records<'a>(
    result: &'a SweepResult,
    cell: (Mode, usize, usize),
) -> Vec<&'a SweepRecord> {
    result
        .records
        .iter()
        .filter(|r| (r.mode, r.n_scenarios, r.k_next) == cell)
        .collect()
}

fn mean(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn write_aggregate(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut conf_headers = String::new();
    for e in &result.eps_grid {
        conf_headers.push_str(&format!(
            ",confidence_eps_{e},wilson_lo_eps_{e},wilson_hi_eps_{e}"
        ));
    }
    writeln!(
        w,
        "mode,n_scenarios,k_next,reps,solved,eps_tilde_mean,eps_tilde_std{conf_headers},\
         certify_frac,certify_gap_mean"
    )?;
    for cell in cells(result) {
        let rs = cell_records(result, cell);
        let solved: Vec<&&SweepRecord> =
            rs.iter().filter(|r| r.status == "optimal").collect();
        let eps: Vec<f64> = solved.iter().map(|r| r.eps_tilde).collect();
        let m = mean(&eps);
        let sd = if eps.len() > 1 {
            (eps.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (eps.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut conf_cols = String::new();
        for i in 0..result.eps_grid.len() {
            let hits = rs.iter().filter(|r| r.member[i]).count();
            let frac = hits as f64 / rs.len() as f64;
            let (lo, hi) = wilson_interval(hits, rs.len());
            conf_cols.push_str(&format!(",{frac},{lo},{hi}"));
        }
        let certs: Vec<bool> = rs.iter().filter_map(|r| r.certified).collect();
        let cert_frac = if certs.is_empty() {
            String::new()
        } else {
            (certs.iter().filter(|c| **c).count() as f64 / certs.len() as f64).to_string()
        };
        let gaps: Vec<f64> = rs.iter().filter_map(|r| r.certify_gap).collect();
        let gap_mean = if gaps.is_empty() { String::new() } else { mean(&gaps).to_string() };
        writeln!(
            w,
            "{},{},{},{},{},{},{}{},{},{}",
            cell.0,
            cell.1,
            cell.2,
            rs.len(),
            solved.len(),
            m,
            sd,
            conf_cols,
            cert_frac,
            gap_mean,
        )?;
    }
    Ok(())
}

/// Theoretical sample sizes (the closed-form bound and the exact binomial
/// size) over an ε grid for several δ.
fn write_theory(path: &Path, cfg: &ExperimentConfig, ctx: &BenchContext) -> Result<()> {
    let inputs = super::sweep::certificate_inputs(
        cfg,
        &ctx.model,
        &ctx.cost_set,
        &ctx.value_set,
        ctx.model.lip_p(),
    )?;
    let n_dim = ctx.cost_set.len() + ctx.value_set.len() + 1;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epsilon,delta,g,n_campi,n_exact")?;
    for &delta in &[0.01, 0.05, 0.1, 0.2] {
        for i in 4..=39 {
            let eps = i as f64 / 40.0;
            let g =
                complexity::ball_lower_bound_g(eps / ctx.l_lambda, inputs.d, &inputs.box_sides)?;
            if g >= 1.0 {
                continue;
            }
            let n_campi = complexity::scenario_size_campi(n_dim, g, delta)?;
            let n_exact = complexity::scenario_size_exact(n_dim, g, delta)?;
            writeln!(w, "{eps},{delta},{g},{n_campi},{n_exact}")?;
        }
    }
    Ok(())
}

fn write_meta(path: &Path, cfg: &ExperimentConfig, ctx: &BenchContext) -> Result<()> {
    let thresholds = complexity::theta_thresholds(
        cfg.model.gamma,
        ctx.model.joint_dim(),
        ctx.model.state_box().volume() * ctx.model.action_box().volume(),
    )?;
    let meta = format!(
        "# run metadata (derived constants; the config echo follows)\n\
         l_lambda = {}\n\
         campi_cell = {}\n\
         theta_threshold_min_rule = {}\n\
         theta_threshold_leb_rule = {}\n\
         theta_threshold_dim_rule = {}\n\
         reference_tol = {}\n\
         variation_delta_reported = {}\n\n[config]\n{}",
        ctx.l_lambda,
        ctx.campi_cell.map_or(String::from("none"), |n| n.to_string()),
        thresholds.min_rule,
        thresholds.leb_rule,
        thresholds.dim_rule,
        ctx.refs.tol,
        cfg.variation_delta,
        indent_config(&cfg.to_toml()),
    );
    std::fs::write(path, meta)?;
    Ok(())
}

fn indent_config(toml: &str) -> String {
    // Nested under [config]: shift table headers.
    toml.lines()
        .map(|l| {
            if l.starts_with('[') {
                format!("[config.{}", &l[1..])
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_plots(
    dir: &Path,
    result: &SweepResult,
    cfg: &ExperimentConfig,
    ctx: &BenchContext,
) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let known_ns: Vec<usize> = {
        let mut ns: Vec<usize> = cells(result)
            .into_iter()
            .filter(|c| c.0 == Mode::Known)
            .map(|c| c.1)
            .collect();
        ns.sort_unstable();
        ns.dedup();
        ns
    };

    // Empirical confidence vs N, one series per probed ε.
    let mut conf_series = Vec::new();
    for (i, eps) in result.eps_grid.iter().enumerate() {
        let mut points = Vec::new();
        for &n in &known_ns {
            let rs = cell_records(result, (Mode::Known, n, 0));
            if rs.is_empty() {
                continue;
            }
            let hits = rs.iter().filter(|r| r.member[i]).count();
            points.push((n as f64, hits as f64 / rs.len() as f64));
        }
        conf_series.push(Series { name: format!("eps = {eps}"), points });
    }
    let p = dir.join("confidence_vs_n.svg");
    line_plot(
        &p,
        "Empirical membership confidence",
        "scenario count N",
        "confidence",
        &conf_series,
        true,
        false,
    )?;
    written.push(p);

    // Mean ε̃ vs N.
    let mut eps_pts = Vec::new();
    for &n in &known_ns {
        let vals: Vec<f64> = cell_records(result, (Mode::Known, n, 0))
            .iter()
            .filter(|r| r.status == "optimal")
            .map(|r| r.eps_tilde)
            .collect();
        if !vals.is_empty() {
            eps_pts.push((n as f64, mean(&vals)));
        }
    }
    let p = dir.join("eps_tilde_vs_n.svg");
    line_plot(
        &p,
        "Objective value of the scenario program",
        "scenario count N",
        "mean eps~",
        &[Series { name: "mean eps~".into(), points: eps_pts }],
        true,
        false,
    )?;
    written.push(p);

    // Theoretical N(ε) for several δ.
    let inputs = super::sweep::certificate_inputs(
        cfg,
        &ctx.model,
        &ctx.cost_set,
        &ctx.value_set,
        ctx.model.lip_p(),
    )?;
    let n_dim = ctx.cost_set.len() + ctx.value_set.len() + 1;
    let mut theory_series = Vec::new();
    for &delta in &[0.01, 0.05, 0.1, 0.2] {
        let mut points = Vec::new();
        for i in 4..=39 {
            let eps = i as f64 / 40.0;
            let g = complexity::ball_lower_bound_g(eps / ctx.l_lambda, inputs.d, &inputs.box_sides)?;
            if g >= 1.0 {
                continue;
            }
            let n = complexity::scenario_size_campi(n_dim, g, delta)?;
            points.push((eps, n as f64));
        }
        theory_series.push(Series { name: format!("delta = {delta}"), points });
    }
    let p = dir.join("theory_n_vs_eps.svg");
    line_plot(
        &p,
        "Theoretical scenario bound",
        "accuracy eps",
        "N bound",
        &theory_series,
        false,
        true,
    )?;
    written.push(p);

    // Expert vs optimal value under the recovered cost, where certified.
    let mut expert_pts = Vec::new();
    let mut gap_pts = Vec::new();
    for &n in &known_ns {
        let rs = cell_records(result, (Mode::Known, n, 0));
        let gaps: Vec<f64> = rs.iter().filter_map(|r| r.certify_gap).collect();
        if !gaps.is_empty() {
            gap_pts.push((n as f64, mean(&gaps)));
            expert_pts.push((n as f64, 0.0));
        }
    }
    if !gap_pts.is_empty() {
        let p = dir.join("value_gap_vs_n.svg");
        line_plot(
            &p,
            "Expert minus optimal value under the recovered cost",
            "scenario count N",
            "mean value gap",
            &[Series { name: "mean gap".into(), points: gap_pts }],
            true,
            false,
        )?;
        written.push(p);
    }
    Ok(written)
}

/// Re-load a records.csv written by [`write_records`].
pub fn load_records(path: &Path) -> Result<SweepResult> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Domain("records csv is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let eps_grid: Vec<f64> = cols
        .iter()
        .filter_map(|c| c.strip_prefix("member_eps_"))
        .map(|e| {
            e.parse::<f64>()
                .map_err(|err| Error::Domain(format!("bad member column {e:?}: {err}")))
        })
        .collect::<Result<_>>()?;
    let member_start = cols
        .iter()
        .position(|c| c.starts_with("member_eps_"))
        .ok_or_else(|| Error::Domain("records csv lacks member columns".into()))?;
    let mut records = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> f64 { s.parse().unwrap_or(f64::NAN) };
        records.push(SweepRecord {
            mode: if f[0] == "known" { Mode::Known } else { Mode::Sampled },
            n_scenarios: f[1].parse().unwrap_or(0),
            k_next: f[2].parse().unwrap_or(0),
            rep: f[3].parse().unwrap_or(0),
            seed: f[4].parse().unwrap_or(0),
            status: f[5].to_string(),
            eps_tilde: parse(f[6]),
            alpha_l1: parse(f[7]),
            beta_l1: parse(f[8]),
            pairing_value: parse(f[9]),
            worst_margin: parse(f[10]),
            lip_row: parse(f[11]),
            certified_level: parse(f[12]),
            member: (0..eps_grid.len()).map(|i| f[member_start + i] == "1").collect(),
            certify_gap: f[member_start + eps_grid.len()].parse().ok(),
            certify_threshold: f[member_start + eps_grid.len() + 1].parse().ok(),
            certified: match f[member_start + eps_grid.len() + 2] {
                "1" => Some(true),
                "0" => Some(false),
                _ => None,
            },
            wall_ms: f[member_start + eps_grid.len() + 3].parse().unwrap_or(0),
        });
    }
    Ok(SweepResult { eps_grid, records, campi_cell: None })
}
