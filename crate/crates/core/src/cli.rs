//! Subcommand dispatch for the `tyc` binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 invariant violation.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::steady_state_report;
use crate::bifurcation::{detect_transition, sweep, SweepError};
use crate::config::{ConfigError, ScenarioConfig};
use crate::exec::Execution;
use crate::integrator::{continuous_dependence_probe, run, BoundKind, SimError, SimulationResult};
use crate::model::{ModelVariant, SPECIES};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    SteadyStates,
    Bifurcate,
    CompareModels,
    ProbeDependence,
    Validate,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn sim_code(e: &SimError) -> i32 {
    match e {
        SimError::Validation(_) | SimError::Grid(_) | SimError::Config(_) => 2,
        SimError::NonFinite { .. } | SimError::SolverDidNotConverge { .. } => 3,
        SimError::InvariantViolation(_) => 4,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 2,
            Self::Sim(e) => sim_code(e),
            Self::Sweep(SweepError::Run { source, .. }) => sim_code(source),
            Self::Sweep(SweepError::UnsortedGrid | SweepError::NonDecayingMu | SweepError::TooFewRecords(_)) => 2,
            Self::Sweep(SweepError::NoTransition(_)) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "numerical",
            4 => "invariant-violation",
            _ => "error",
        }
    }

    /// Machine-readable form written to `error.json` and stderr.
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let Self::Sim(SimError::InvariantViolation(event))
        | Self::Sweep(SweepError::Run { source: SimError::InvariantViolation(event), .. }) = self
        {
            v["event"] = serde_json::to_value(event).unwrap_or(Value::Null);
        }
        v
    }
}

/// What a successful subcommand produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Value,
    /// One human-readable line, printed unless `--quiet`.
    pub message: String,
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Out<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, CliError> {
        r.map_err(|source| CliError::Io { path: path.to_path_buf(), source })
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let p = self.path(name);
        Self::io(&p, report::write_json(&p, value))
    }

    fn timeseries(&mut self, name: &str, res: &SimulationResult) -> Result<(), CliError> {
        let p = self.path(name);
        Self::io(&p, report::write_timeseries_csv(&p, &res.samples))
    }
}

fn run_summary(res: &SimulationResult, window: usize) -> Value {
    json!({
        "t_final": res.final_state.t,
        "steps": res.steps,
        "dt": res.dt,
        "cg_iterations": res.cg_iterations,
        "convergence": res.convergence,
        "final_l2": res.final_state.l2_norms(),
        "final_mean": res.final_state.means(),
        "final_window_max_l2": res.final_window_max(window),
        "violations": {
            "count": res.violations.count,
            "below": SPECIES.iter().zip(res.violations.below).map(|(s, n)| (s.to_string(), json!(n))).collect::<serde_json::Map<_, _>>(),
            "above": SPECIES.iter().zip(res.violations.above).map(|(s, n)| (s.to_string(), json!(n))).collect::<serde_json::Map<_, _>>(),
            "first_events": res.violations.events.iter().take(20).collect::<Vec<_>>(),
        },
    })
}

/// Runs one subcommand against a parsed configuration, writing artifacts
/// into `out_dir` (created if missing).
pub fn run_scenario(
    command: Command,
    cfg: &ScenarioConfig,
    base_dir: &Path,
    out_dir: &Path,
    exec: Execution,
) -> Result<Outcome, CliError> {
    if command == Command::Validate {
        cfg.scenario(base_dir)?;
        return Ok(Outcome { files: vec![], summary: json!({"valid": true}), message: "configuration is valid".into() });
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io { path: out_dir.to_path_buf(), source })?;
    let mut out = Out { dir: out_dir, files: vec![] };

    let (summary, message) = match command {
        Command::Validate => unreachable!(),
        Command::SteadyStates => {
            let rep = steady_state_report(&cfg.params.reduced());
            out.json("steady_states.json", &rep)?;
            let msg = format!("{} steady state(s); critical beta {}", rep.branches.len(), report::fmt_num(rep.critical_beta));
            (serde_json::to_value(&rep).unwrap_or(Value::Null), msg)
        }
        Command::Simulate => {
            let sc = cfg.scenario(base_dir)?;
            let res = run(&sc, exec)?;
            out.timeseries("timeseries.csv", &res)?;
            let p = out.path("final_fields.csv");
            Out::io(&p, report::write_fields_csv(&p, &res.final_state))?;
            let mut summary = run_summary(&res, sc.convergence.window);
            summary["model"] = json!(sc.model);
            summary["stepper"] = json!(sc.stepper);
            out.json("summary.json", &summary)?;
            let msg = format!(
                "{} model: t = {}, converged = {}, {} steps in {:.3?}",
                sc.model,
                report::fmt_num(res.final_state.t),
                res.convergence.converged,
                res.steps,
                res.wall_clock
            );
            (summary, msg)
        }
        Command::CompareModels => {
            let sc = cfg.scenario(base_dir)?;
            let mut modified_sc = sc.clone();
            modified_sc.model = ModelVariant::Modified;
            let mut original_sc = sc.clone();
            original_sc.model = ModelVariant::Original;

            let modified = run(&modified_sc, exec)?;
            out.timeseries("modified_timeseries.csv", &modified)?;
            let original = run(&original_sc, exec);
            let original_summary = match &original {
                Ok(res) => {
                    out.timeseries("original_timeseries.csv", res)?;
                    run_summary(res, sc.convergence.window)
                }
                Err(e) => json!({ "failed": e.to_string() }),
            };
            let neg = |res: &SimulationResult, s: &str| res.violations.count_for(s, BoundKind::Below);
            let original_neg_s = original.as_ref().map(|r| neg(r, "s")).unwrap_or(0);
            let summary = json!({
                "modified": run_summary(&modified, sc.convergence.window),
                "original": original_summary,
                "negative_s_events": { "modified": neg(&modified, "s"), "original": original_neg_s },
                "negativity_only_in_original": modified.violations.count == 0 && original_neg_s > 0,
            });
            out.json("compare.json", &summary)?;
            let msg = format!(
                "negative-s events: original {}, modified {}",
                original_neg_s,
                neg(&modified, "s")
            );
            (summary, msg)
        }
        Command::Bifurcate => {
            let sc = cfg.scenario(base_dir)?;
            let betas = cfg.sweep_grid();
            let records = sweep(&betas, &sc, &cfg.sweep.seed, exec)?;
            let p = out.path("bifurcation.csv");
            Out::io(&p, report::write_bifurcation_csv(&p, &records))?;
            let threshold = cfg.sweep.threshold.unwrap_or(1e-2 * sc.params.k * sc.grid.measure().sqrt());
            let b0 = crate::analysis::critical_beta(sc.params.death[0], sc.params.death[1], sc.params.k);
            let (transition, note) = match detect_transition(&records, threshold) {
                Ok(t) => (Some(t), None),
                Err(e @ (SweepError::NoTransition(_) | SweepError::TooFewRecords(_))) => (None, Some(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            let summary = json!({
                "critical_beta": b0,
                "threshold": threshold,
                "points": betas.len(),
                "seed": cfg.sweep.seed,
                "transition": transition,
                "note": note,
            });
            out.json("transition.json", &summary)?;
            let msg = match transition {
                Some(t) => format!(
                    "transition at beta = {} ± {} (critical {})",
                    report::fmt_num(t.beta_star),
                    report::fmt_num(t.half_width),
                    report::fmt_num(b0)
                ),
                None => format!("no transition found (critical {})", report::fmt_num(b0)),
            };
            (summary, msg)
        }
        Command::ProbeDependence => {
            let sc = cfg.scenario(base_dir)?;
            let rep = continuous_dependence_probe(&sc, cfg.probe_epsilon(), cfg.seed, exec)?;
            let p = out.path("probe.csv");
            Out::io(&p, report::write_probe_csv(&p, &rep.samples))?;
            let summary = json!({
                "epsilon": rep.epsilon,
                "ratio": rep.ratio,
                "ratio_half": rep.ratio_half,
                "relative_change": rep.relative_change,
                "first_order": rep.first_order,
                "tail_nonincreasing": rep.tail_nonincreasing,
                "sup_distance": rep.sup_distance,
            });
            out.json("probe.json", &summary)?;
            let msg = format!(
                "sup ratio {} (half-epsilon {}), first order: {}",
                rep.ratio.map(report::fmt_num).unwrap_or_else(|| "n/a".into()),
                rep.ratio_half.map(report::fmt_num).unwrap_or_else(|| "n/a".into()),
                rep.first_order
            );
            (summary, msg)
        }
    };
    Ok(Outcome { files: out.files, summary, message })
}

/// Writes `error.json` into `out_dir` when possible.
pub fn write_error(out_dir: &Path, err: &CliError) {
    if std::fs::create_dir_all(out_dir).is_ok() {
        let _ = report::write_json(&out_dir.join("error.json"), &err.to_json());
    }
}
