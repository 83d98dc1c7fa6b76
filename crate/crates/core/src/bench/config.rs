//! Experiment configuration: a plain TOML file mirroring the benchmark
//! parameters, sweep grids, and output settings.

use crate::lqg::LqgParams;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stream in the run derives from it.
    pub seed: u64,
    pub output_dir: String,
    /// Reported verbatim in the run metadata; not consumed by any
    /// computation (its meaning in the source experiments is unspecified).
    #[serde(default = "default_variation_delta")]
    pub variation_delta: f64,

    pub model: LqgParams,
    pub inverse: InverseConfig,
    pub reference: ReferenceConfig,
    pub membership: MembershipConfig,
    pub forward: ForwardConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub sample_mode: Option<SampleModeConfig>,
}

fn default_variation_delta() -> f64 {
    1e-7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseConfig {
    pub theta: f64,
    /// `lqg_poly_c9` or `monomials:<max_total_degree>`.
    pub cost_basis: String,
    /// `lqg_poly_u3` or `monomials:<max_total_degree>`.
    pub value_basis: String,
    #[serde(default = "default_style")]
    pub constraint_style: crate::inverse::ConstraintStyle,
}

fn default_style() -> crate::inverse::ConstraintStyle {
    crate::inverse::ConstraintStyle::L1Ball
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Certified absolute tolerance of the occupancy references.
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembershipConfig {
    pub grid_step: f64,
    /// Accuracy levels ε probed in the membership sweep.
    pub eps_grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub grid_nodes: usize,
    pub vi_tol: f64,
    /// Std of the truncated-normal action exploration around the greedy
    /// expert (0 disables it; the benchmark needs it so the expert's
    /// occupancy has full-dimensional support).
    #[serde(default)]
    pub exploration_sigma: f64,
    /// Numerical slack added to certificate thresholds (grid bias + Monte
    /// Carlo width).
    pub certify_slack: f64,
    pub expert_rollouts: usize,
    /// Discounted-tail tolerance that sets the policy-evaluation horizon.
    pub value_tail_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub repetitions: usize,
    pub n_grid: Vec<usize>,
    /// Append the theoretical guarantee cell
    /// N = N_campi(n_c+n_u+1, g(ε_max/L_Λ), campi_delta).
    #[serde(default)]
    pub include_campi_cell: bool,
    #[serde(default = "default_campi_delta")]
    pub campi_delta: f64,
    /// N cells where the ε-optimality certificate runs (the guarantee cell,
    /// when enabled, always runs it).
    #[serde(default)]
    pub certify_cells: Vec<usize>,
}

fn default_campi_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleModeConfig {
    pub repetitions: usize,
    pub n_grid: Vec<usize>,
    /// Trajectory/initial/next-state sizes, tied m = n = k.
    pub k_grid: Vec<usize>,
    pub horizon: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults: benchmark dynamics, γ = 0.9, 100 repetitions.
    pub fn lqg_desk() -> Self {
        Self {
            seed: 20_240_901,
            output_dir: "out/lqg_desk".into(),
            variation_delta: 1e-7,
            model: LqgParams::desk(),
            inverse: InverseConfig {
                theta: 0.026,
                cost_basis: "lqg_poly_c9".into(),
                value_basis: "lqg_poly_u3".into(),
                constraint_style: crate::inverse::ConstraintStyle::L1Ball,
            },
            reference: ReferenceConfig { tol: 0.5 },
            membership: MembershipConfig {
                grid_step: 0.02,
                eps_grid: vec![0.05, 0.25, 0.99],
            },
            forward: ForwardConfig {
                grid_nodes: 201,
                vi_tol: 1e-5,
                exploration_sigma: 1.0,
                certify_slack: 0.5,
                expert_rollouts: 4000,
                value_tail_tol: 0.01,
            },
            sweep: SweepConfig {
                repetitions: 100,
                n_grid: vec![100, 300, 1000, 3000],
                include_campi_cell: true,
                campi_delta: 0.1,
                certify_cells: vec![100, 3000],
            },
            sample_mode: Some(SampleModeConfig {
                repetitions: 100,
                n_grid: vec![100, 300, 1000, 3000],
                k_grid: vec![4, 32, 256],
                horizon: 30,
            }),
        }
    }

    /// Long-run settings: γ = 0.99 and 1000 repetitions. Horizons and
    /// tolerances that depend on 1/(1−γ) follow automatically.
    pub fn apply_paper_scale(&mut self) {
        self.model.gamma = 0.99;
        self.sweep.repetitions = 1000;
        if let Some(sm) = &mut self.sample_mode {
            sm.repetitions = 1000;
            sm.horizon = 300;
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.repetitions == 0 {
            return Err(Error::config("sweep needs at least one repetition"));
        }
        if self.sweep.n_grid.is_empty() {
            return Err(Error::config("sweep needs a nonempty N grid"));
        }
        if self.sweep.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("the N grid must be strictly increasing"));
        }
        if self.membership.eps_grid.is_empty()
            || self.membership.eps_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0))
        {
            return Err(Error::config("membership eps grid entries must lie in (0,1)"));
        }
        if let Some(sm) = &self.sample_mode {
            if sm.repetitions == 0 || sm.n_grid.is_empty() || sm.k_grid.is_empty() {
                return Err(Error::config("sample mode needs repetitions, N grid and k grid"));
            }
            if sm.k_grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("the k grid must be strictly increasing"));
            }
        }
        let known = ["lqg_poly_c9", "lqg_poly_u3"];
        for (name, which) in
            [(&self.inverse.cost_basis, "cost"), (&self.inverse.value_basis, "value")]
        {
            if !known.contains(&name.as_str()) && !name.starts_with("monomials:") {
                return Err(Error::Config(format!(
                    "unknown {which} basis {name:?}; expected lqg_poly_c9, lqg_poly_u3 or monomials:<deg>"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::lqg_desk();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.sweep.n_grid, cfg.sweep.n_grid);
        assert_eq!(back.model, cfg.model);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut cfg = ExperimentConfig::lqg_desk();
        cfg.sweep.n_grid = vec![100, 100];
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::lqg_desk();
        cfg.inverse.cost_basis = "fourier".into();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::lqg_desk();
        cfg.membership.eps_grid = vec![1.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paper_scale_flag() {
        let mut cfg = ExperimentConfig::lqg_desk();
        cfg.apply_paper_scale();
        assert_eq!(cfg.model.gamma, 0.99);
        assert_eq!(cfg.sweep.repetitions, 1000);
    }
}
