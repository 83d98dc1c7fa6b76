//! Configuration-driven experiment harness for the truncated-LQG study:
//! sweeps over the scenario count N (and the sample-mode sizes m = n = k),
//! empirical confidence estimation with Wilson intervals, and CSV/SVG
//! emission.
//!
//! A sweep cell is (mode, N, k); each cell runs R independent repetitions.
//! Scenario points are drawn from per-repetition seeded streams whose
//! prefixes are shared across N, so scenario sets are nested within a
//! repetition and the objective ε̃ is exactly nondecreasing in N.

mod config;
mod output;
mod plot;
mod sweep;

pub use config::{ExperimentConfig, SampleModeConfig};
pub use output::{emit_outputs, load_records};
pub use plot::{line_plot, Series};
pub use sweep::{
    empirical_confidence, prepare, run_sweep, BenchContext, Mode, SweepRecord, SweepResult,
};

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0, "Wilson interval needs at least one trial");
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}
