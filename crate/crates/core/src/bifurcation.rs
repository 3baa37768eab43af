//! β sweeps that pair analytic steady-state branches with the long-time
//! state of a simulation, and location of the extinction/survival
//! transition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{steady_states, Branch, SteadyState};
use crate::exec::Execution;
use crate::integrator::{run, Scenario, SimError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("beta grid must be strictly increasing")]
    UnsortedGrid,
    #[error("sweeps need a decaying introduction rate")]
    NonDecayingMu,
    #[error("run at beta = {beta} failed: {source}")]
    Run {
        beta: f64,
        #[source]
        source: SimError,
    },
    #[error("no transition found among {0} records")]
    NoTransition(usize),
    #[error("need at least 3 records, got {0}")]
    TooFewRecords(usize),
}

/// Which interior branch seeds the initial data when it exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedBranch {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub branch: SeedBranch,
    /// Initial `(f, m)` is this multiple of the seed branch.
    pub factor: f64,
    /// Initial `(f, m)` as a fraction of `K` when no interior branch exists.
    pub fallback: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { branch: SeedBranch::Plus, factor: 0.9, fallback: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BifurcationRecord {
    pub beta: f64,
    pub branches: Vec<SteadyState>,
    pub initial: [f64; 2],
    /// Asymptotic per-species L² norms.
    pub l2: [f64; 4],
    /// Asymptotic spatial means.
    pub mean: [f64; 4],
    pub converged: bool,
    pub t_end: f64,
}

impl BifurcationRecord {
    pub fn branch(&self, which: Branch) -> Option<&SteadyState> {
        self.branches.iter().find(|s| s.branch == which)
    }
}

/// Initial `(f, m)` for one β.
pub fn seed_point(branches: &[SteadyState], k: f64, opts: &SweepOptions) -> [f64; 2] {
    let wanted = match opts.branch {
        SeedBranch::Plus => Branch::Plus,
        SeedBranch::Minus => Branch::Minus,
    };
    branches
        .iter()
        .find(|s| s.branch == wanted)
        .or_else(|| branches.iter().find(|s| s.branch == Branch::Critical))
        .map(|s| [opts.factor * s.f, opts.factor * s.m])
        .unwrap_or([opts.fallback * k; 2])
}

/// One analytic + simulated record per β, computed independently and
/// returned in grid order. The base scenario's initial data are replaced by
/// a spatially uniform `(f₀, m₀, 0, 0)` from [`seed_point`].
pub fn sweep(
    betas: &[f64],
    base: &Scenario,
    opts: &SweepOptions,
    exec: Execution,
) -> Result<Vec<BifurcationRecord>, SweepError> {
    if betas.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
        return Err(SweepError::UnsortedGrid);
    }
    if !base.params.mu.decays() {
        return Err(SweepError::NonDecayingMu);
    }
    let n = base.grid.len();
    exec.map(betas, |&beta| {
        let mut sc = base.clone();
        sc.params.beta = beta;
        let branches = steady_states(&sc.params.reduced());
        let initial = seed_point(&branches, sc.params.k, opts);
        sc.initial = [vec![initial[0]; n], vec![initial[1]; n], vec![0.0; n], vec![0.0; n]];
        // the outer sweep already uses the pool
        let res = run(&sc, Execution::Sequential).map_err(|source| SweepError::Run { beta, source })?;
        Ok(BifurcationRecord {
            beta,
            branches,
            initial,
            l2: res.final_state.l2_norms(),
            mean: res.final_state.means(),
            converged: res.convergence.converged,
            t_end: res.final_state.t,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub beta_star: f64,
    pub half_width: f64,
    pub below: f64,
    pub above: f64,
}

/// Midpoint of the first adjacent pair where `‖f‖` crosses `threshold`
/// from below.
pub fn detect_transition(records: &[BifurcationRecord], threshold: f64) -> Result<Transition, SweepError> {
    if records.len() < 3 {
        return Err(SweepError::TooFewRecords(records.len()));
    }
    records
        .windows(2)
        .find(|w| w[0].l2[0] < threshold && w[1].l2[0] >= threshold)
        .map(|w| Transition {
            beta_star: 0.5 * (w[0].beta + w[1].beta),
            half_width: 0.5 * (w[1].beta - w[0].beta),
            below: w[0].beta,
            above: w[1].beta,
        })
        .ok_or(SweepError::NoTransition(records.len()))
}

/// `n` evenly spaced values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
