use irl_core::bench::{emit_outputs, prepare, run_sweep, ExperimentConfig};

fn main() {
    let mut cfg = ExperimentConfig::lqg_desk();
    cfg.sweep.repetitions = 4;
    cfg.sweep.n_grid = vec![100, 300, 1000];
    cfg.sweep.include_campi_cell = false;
    cfg.sweep.certify_cells = vec![100, 1000];
    cfg.sample_mode.as_mut().map(|sm| {
        sm.repetitions = 3;
        sm.n_grid = vec![100, 300];
        sm.k_grid = vec![4, 32];
    });
    cfg.output_dir = "/tmp/irl_smoke".into();
    let t0 = std::time::Instant::now();
    let ctx = prepare(&cfg).unwrap();
    println!("prepare: {:?}  L_lambda={:.3} campi_cell={:?}", t0.elapsed(), ctx.l_lambda, ctx.campi_cell);
    println!("refs occ: {:?}", ctx.refs.occupancy.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    let t1 = std::time::Instant::now();
    let result = run_sweep(&cfg, &ctx).unwrap();
    println!("sweep: {:?} ({} records)", t1.elapsed(), result.records.len());
    for r in result.records.iter().filter(|r| r.mode == irl_core::bench::Mode::Known && r.rep == 0) {
        println!("known N={:<5} eps~={:.3e} certlvl={:.3} member={:?} gap={:?}", r.n_scenarios, r.eps_tilde, r.certified_level, r.member, r.certify_gap);
    }
    for r in result.records.iter().filter(|r| r.mode == irl_core::bench::Mode::Sampled && r.rep == 0) {
        println!("sampled N={:<5} k={:<4} eps~={:.3e} certlvl={:.3} member={:?}", r.n_scenarios, r.k_next, r.eps_tilde, r.certified_level, r.member);
    }
    let files = emit_outputs(&result, &cfg, &ctx, std::path::Path::new("/tmp/irl_smoke")).unwrap();
    println!("wrote {} files", files.len());
}
