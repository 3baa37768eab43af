//! Scenario configuration documents (TOML).
//!
//! Every table rejects unknown keys. See `configs/` at the repository root
//! for one example per subcommand.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{critical_beta, steady_states};
use crate::bifurcation::{seed_point, SeedBranch, SweepOptions};
use crate::grid::{GridError, GridSpec};
use crate::integrator::{ConvergenceSettings, Scenario, SolverSettings, Stepper};
use crate::model::{validate_initial_data, ModelVariant, Parameters, ValidationError};
use crate::report;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config validation error: {0}")]
    Validation(#[from] ValidationError),
    #[error("grid: {0}")]
    Grid(#[from] GridError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("initial data file {path}: {message}")]
    InitialFile { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Initial data for the four species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Spatially uniform `(f, m, s, r)`.
    Constant { values: [f64; 4] },
    /// Independent uniform draws in `[0, scale_i · K]` per cell.
    Random {
        #[serde(default = "unit_scale")]
        scale: [f64; 4],
    },
    /// CSV with columns `f, m, s, r` in cell order (the `final_fields.csv` layout).
    File { path: PathBuf },
    /// `factor · (f*, m*)` of a steady-state branch, with given `s` and `r`.
    NearBranch {
        #[serde(default = "plus")]
        branch: SeedBranch,
        #[serde(default = "nine_tenths")]
        factor: f64,
        #[serde(default)]
        s: f64,
        #[serde(default)]
        r: f64,
    },
}

fn unit_scale() -> [f64; 4] {
    [1.0; 4]
}
fn plus() -> SeedBranch {
    SeedBranch::Plus
}
fn nine_tenths() -> f64 {
    0.9
}
fn default_interval() -> f64 {
    0.1
}
fn default_max_events() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to `β₀/2`.
    pub beta_min: Option<f64>,
    /// Defaults to `2β₀`.
    pub beta_max: Option<f64>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: SweepOptions,
    /// Defaults to `1e-2 · K · √|Ω|`.
    pub threshold: Option<f64>,
}

fn default_points() -> usize {
    31
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { beta_min: None, beta_max: None, points: default_points(), seed: SweepOptions::default(), threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Defaults to `1e-3 · K`.
    pub epsilon: Option<f64>,
}

/// A parsed configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub model: ModelVariant,
    #[serde(default)]
    pub stepper: Stepper,
    pub t_max: f64,
    #[serde(default = "default_interval")]
    pub output_interval: f64,
    pub dt: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
    pub params: Parameters,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub convergence: ConvergenceSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub probe: Option<ProbeConfig>,
}

/// Parses and validates a document; initial data are resolved later by
/// [`ScenarioConfig::scenario`].
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text)?;
    cfg.params.validate()?;
    cfg.grid.build()?;
    if let InitialSpec::Random { scale } = &cfg.initial {
        if scale.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(ConfigError::Invalid(format!("initial.scale entries must lie in [0, 1], got {scale:?}")));
        }
    }
    if cfg.sweep.points == 0 {
        return Err(ConfigError::Invalid("sweep.points must be positive".into()));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

impl ScenarioConfig {
    /// Builds the runnable scenario; relative file paths resolve against `base_dir`.
    pub fn scenario(&self, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let grid = self.grid.build()?;
        let n = grid.len();
        let k = self.params.k;
        let initial: [Vec<f64>; 4] = match &self.initial {
            InitialSpec::Constant { values } => values.map(|v| vec![v; n]),
            InitialSpec::Random { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                scale.map(|s| (0..n).map(|_| rng.random_range(0.0..=s * k)).collect())
            }
            InitialSpec::File { path } => {
                let full = base_dir.join(path);
                report::read_fields_csv(&full, n)
                    .map_err(|message| ConfigError::InitialFile { path: full.clone(), message })?
            }
            InitialSpec::NearBranch { branch, factor, s, r } => {
                let opts = SweepOptions { branch: *branch, factor: *factor, ..SweepOptions::default() };
                let [f0, m0] = seed_point(&steady_states(&self.params.reduced()), k, &opts);
                [vec![f0; n], vec![m0; n], vec![*s; n], vec![*r; n]]
            }
        };
        let [f, m, s, r] = &initial;
        validate_initial_data([f, m, s, r], k)?;
        let sc = Scenario {
            model: self.model,
            params: self.params.clone(),
            grid,
            initial,
            stepper: self.stepper,
            t_max: self.t_max,
            dt: self.dt,
            output_interval: self.output_interval,
            convergence: self.convergence,
            solver: self.solver,
            max_events: self.max_events,
        };
        sc.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(sc)
    }

    pub fn sweep_grid(&self) -> Vec<f64> {
        let b0 = critical_beta(self.params.death[0], self.params.death[1], self.params.k);
        crate::bifurcation::linspace(
            self.sweep.beta_min.unwrap_or(0.5 * b0),
            self.sweep.beta_max.unwrap_or(2.0 * b0),
            self.sweep.points,
        )
    }

    pub fn probe_epsilon(&self) -> f64 {
        self.probe.as_ref().and_then(|p| p.epsilon).unwrap_or(1e-3 * self.params.k)
    }
}
