//! Method-of-lines time integration of the four-species system with
//! zero-flux boundaries.
//!
//! Two steppers are provided: forward Euler for everything, and an IMEX
//! step that keeps the reactions explicit and solves the diffusion part
//! implicitly with matrix-free conjugate gradients. Every step is followed by
//! a bounds check; under the modified model leaving `[0, K]` is a hard error,
//! under the original model it is only logged.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::grid::{diffusion_at, diffusion_diag_bound, l2_norm_slice, Field, Grid, GridError};
use crate::model::{
    modified_rates, original_rates, validate_initial_data, ModelVariant, MuProfile, Parameters,
    StatePoint, ValidationError, SPECIES,
};

/// Relative slack before a value counts as leaving `[0, K]`.
pub const BOUNDS_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("non-finite value in {species} at cell {cell}, t = {t}")]
    NonFinite { t: f64, species: &'static str, cell: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(BoundsEvent),
    #[error("implicit solve for {species} did not converge in {iterations} iterations (residual {residual:e})")]
    SolverDidNotConverge { species: &'static str, iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    #[default]
    Explicit,
    Imex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Residual target relative to the RMS of the right-hand side.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSettings {
    /// Number of output samples in the detection window.
    pub window: usize,
    /// Defaults to `1e-6 · K · √|Ω|`.
    pub tol: Option<f64>,
    /// Stop integrating once converged.
    pub stop: bool,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self { window: 50, tol: None, stop: true }
    }
}

/// Everything needed for one simulation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: ModelVariant,
    pub params: Parameters,
    pub grid: Grid,
    /// Initial `(f, m, s, r)` fields in cell order.
    pub initial: [Vec<f64>; 4],
    pub stepper: Stepper,
    pub t_max: f64,
    /// Fixed step; chosen from the stability limits when absent.
    pub dt: Option<f64>,
    pub output_interval: f64,
    pub convergence: ConvergenceSettings,
    pub solver: SolverSettings,
    /// Cap on stored bounds events (all are counted).
    pub max_events: usize,
}

impl Scenario {
    /// A scenario with default numerics and uniform initial data.
    pub fn new(params: Parameters, grid: Grid, initial: [f64; 4], t_max: f64) -> Self {
        Self {
            model: ModelVariant::Modified,
            params,
            grid,
            initial: initial.map(|v| vec![v; grid.len()]),
            stepper: Stepper::Explicit,
            t_max,
            dt: None,
            output_interval: 0.1,
            convergence: ConvergenceSettings::default(),
            solver: SolverSettings::default(),
            max_events: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if let MuProfile::PerCell(v) = &self.params.mu_profile {
            if v.len() != self.grid.len() {
                return Err(SimError::Config(format!(
                    "mu_profile has {} entries for {} cells",
                    v.len(),
                    self.grid.len()
                )));
            }
        }
        for (name, f) in SPECIES.iter().zip(&self.initial) {
            if f.len() != self.grid.len() {
                return Err(SimError::Config(format!(
                    "initial {name} has {} values for {} cells",
                    f.len(),
                    self.grid.len()
                )));
            }
        }
        let [f, m, s, r] = &self.initial;
        validate_initial_data([f, m, s, r], self.params.k)?;
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.t_max) {
            return Err(SimError::Config(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !positive(self.output_interval) {
            return Err(SimError::Config(format!(
                "output_interval must be positive, got {}",
                self.output_interval
            )));
        }
        if let Some(dt) = self.dt {
            if !positive(dt) {
                return Err(SimError::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if self.convergence.window < 2 {
            return Err(SimError::Config("convergence window needs at least 2 samples".into()));
        }
        if self.solver.rel_tol.is_nan() || self.solver.rel_tol <= 0.0 || self.solver.max_iter == 0 {
            return Err(SimError::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn convergence_tol(&self) -> f64 {
        self.convergence
            .tol
            .unwrap_or(1e-6 * self.params.k * self.grid.measure().sqrt())
    }

    /// The step actually used by [`run`].
    pub fn effective_dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| auto_dt(&self.params, &self.grid, self.stepper))
    }
}

/// Explicit diffusion limit `safety · h_min² / (2 · dim · a_max)`.
pub fn stable_dt(grid: &Grid, a_max: f64, safety: f64) -> f64 {
    let h = grid.h_min();
    safety * h * h / (2.0 * grid.dim() as f64 * a_max)
}

/// Largest step for which the stepper keeps every field inside `[0, K]`.
///
/// Forward Euler needs `dt · (diag + R) ≤ 1`, where `diag` bounds the
/// diffusion diagonal and `R` the reaction rates; IMEX only needs `dt · R ≤ 1`.
pub fn auto_dt(params: &Parameters, grid: &Grid, stepper: Stepper) -> f64 {
    let a_max = params.max_diffusion();
    let rate = params.reaction_rate_bound();
    match stepper {
        Stepper::Explicit => {
            let diag = diffusion_diag_bound(grid, a_max);
            stable_dt(grid, a_max, 0.9).min(0.95 / (diag + rate))
        }
        Stepper::Imex => 0.9 / rate,
    }
}

/// Solution snapshot `(f, m, s, r)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub step: u64,
    pub fields: [Field; 4],
}

impl SimState {
    pub fn from_values(grid: Grid, values: [Vec<f64>; 4]) -> Result<Self, GridError> {
        let [f, m, s, r] = values;
        Ok(Self {
            t: 0.0,
            step: 0,
            fields: [Field::new(grid, f)?, Field::new(grid, m)?, Field::new(grid, s)?, Field::new(grid, r)?],
        })
    }

    pub fn grid(&self) -> &Grid {
        self.fields[0].grid()
    }

    pub fn point(&self, cell: usize) -> StatePoint {
        StatePoint::from_array(self.fields.each_ref().map(|f| f.values()[cell]))
    }

    pub fn l2_norms(&self) -> [f64; 4] {
        self.fields.each_ref().map(|f| l2_norm_slice(f.values(), f.grid()))
    }

    pub fn means(&self) -> [f64; 4] {
        self.fields.each_ref().map(Field::mean)
    }

    /// `‖Z − W‖` in `L²(Ω)⁴`.
    pub fn distance(&self, other: &SimState) -> f64 {
        let vol = self.grid().cell_volume();
        let sum: f64 = self
            .fields
            .iter()
            .zip(&other.fields)
            .flat_map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        (sum * vol).sqrt()
    }

    fn flat(&self) -> Vec<f64> {
        self.fields.iter().flat_map(|f| f.values().iter().copied()).collect()
    }
}

/// Per-cell diffusion coefficients and `μ` sampled at one time.
struct Forcing {
    a: [Vec<f64>; 4],
    time_dependent: bool,
    mu_t: f64,
}

impl Forcing {
    fn new(params: &Parameters, grid: &Grid, t: f64) -> Self {
        let mut forcing = Self {
            a: std::array::from_fn(|_| vec![0.0; grid.len()]),
            time_dependent: params.diffusion.iter().any(|c| !c.is_constant()),
            mu_t: 0.0,
        };
        forcing.fill_coefficients(params, grid, t);
        forcing.mu_t = params.mu.sample(t);
        forcing
    }

    fn fill_coefficients(&mut self, params: &Parameters, grid: &Grid, t: f64) {
        let ext = grid.extents()[0];
        for (a, coef) in self.a.iter_mut().zip(&params.diffusion) {
            for (c, v) in a.iter_mut().enumerate() {
                *v = coef.sample(grid.center(c)[0] / ext, t);
            }
        }
    }

    fn update(&mut self, params: &Parameters, grid: &Grid, t: f64) {
        if self.time_dependent {
            self.fill_coefficients(params, grid, t);
        }
        self.mu_t = params.mu.sample(t);
    }
}

#[inline]
fn kinetics(model: ModelVariant, p: &StatePoint, params: &Parameters, mu: f64) -> [f64; 4] {
    match model {
        ModelVariant::Modified => modified_rates(p, params, mu),
        ModelVariant::Original => original_rates(p, params.beta, params.k, params.death, mu),
    }
}

fn as_slices(fields: &[Field; 4]) -> [&[f64]; 4] {
    fields.each_ref().map(Field::values)
}

fn as_slices_mut(fields: &mut [Field; 4]) -> [&mut [f64]; 4] {
    fields.each_mut().map(Field::values_mut)
}

/// `next = cur + dt · (diffusion_scale · A cur + F(cur))`.
#[allow(clippy::too_many_arguments)]
fn explicit_update(
    exec: Execution,
    grid: &Grid,
    cur: &[Field; 4],
    forcing: &Forcing,
    params: &Parameters,
    model: ModelVariant,
    dt: f64,
    with_diffusion: bool,
    next: &mut [Field; 4],
) {
    let u = as_slices(cur);
    let a = &forcing.a;
    let mu_t = forcing.mu_t;
    let profile = &params.mu_profile;
    exec.fill4(as_slices_mut(next), |c| {
        let p = StatePoint::new(u[0][c], u[1][c], u[2][c], u[3][c]);
        let rates = kinetics(model, &p, params, mu_t * profile.at(c));
        std::array::from_fn(|i| {
            let diff = if with_diffusion { diffusion_at(u[i], &a[i], grid, c) } else { 0.0 };
            u[i][c] + dt * (diff + rates[i])
        })
    });
}

/// Solves `(I − dt·A) x = b` by conjugate gradients, starting from the
/// current contents of `x`. Returns the iteration count.
#[allow(clippy::too_many_arguments)]
pub fn solve_implicit_diffusion(
    exec: Execution,
    grid: &Grid,
    a: &[f64],
    dt: f64,
    b: &[f64],
    x: &mut [f64],
    settings: &SolverSettings,
) -> Result<usize, (usize, f64)> {
    let n = b.len();
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>();
    let apply = |v: &[f64], out: &mut [f64]| exec.fill(out, |c| v[c] - dt * diffusion_at(v, a, grid, c));

    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let target = settings.rel_tol * settings.rel_tol * dot(b, b) / n as f64;
    let mut rs = dot(&r, &r);
    if rs <= target {
        return Ok(0);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for it in 1..=settings.max_iter {
        apply(&p, &mut ap);
        let alpha = rs / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        if rs_new <= target {
            return Ok(it);
        }
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    Err((settings.max_iter, rs.sqrt()))
}

#[allow(clippy::too_many_arguments)]
fn imex_update(
    exec: Execution,
    grid: &Grid,
    cur: &[Field; 4],
    forcing: &Forcing,
    params: &Parameters,
    model: ModelVariant,
    dt: f64,
    solver: &SolverSettings,
    next: &mut [Field; 4],
) -> Result<usize, SimError> {
    explicit_update(exec, grid, cur, forcing, params, model, dt, false, next);
    let mut iterations = 0;
    for (i, field) in next.iter_mut().enumerate() {
        let rhs = field.values().to_vec();
        iterations += solve_implicit_diffusion(exec, grid, &forcing.a[i], dt, &rhs, field.values_mut(), solver)
            .map_err(|(iterations, residual)| SimError::SolverDidNotConverge {
                species: SPECIES[i],
                iterations,
                residual,
            })?;
    }
    Ok(iterations)
}

fn check_finite(t: f64, fields: &[Field; 4]) -> Result<(), SimError> {
    for (i, f) in fields.iter().enumerate() {
        if let Some(cell) = f.values().iter().position(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { t, species: SPECIES[i], cell });
        }
    }
    Ok(())
}

fn empty_like(state: &SimState) -> [Field; 4] {
    std::array::from_fn(|_| Field::constant(*state.grid(), 0.0))
}

/// One forward-Euler step; coefficients and `μ` are sampled at `state.t`.
pub fn step_explicit(
    state: &SimState,
    dt: f64,
    params: &Parameters,
    model: ModelVariant,
    exec: Execution,
) -> Result<SimState, SimError> {
    let grid = *state.grid();
    let forcing = Forcing::new(params, &grid, state.t);
    let mut next = empty_like(state);
    explicit_update(exec, &grid, &state.fields, &forcing, params, model, dt, true, &mut next);
    let t = state.t + dt;
    check_finite(t, &next)?;
    Ok(SimState { t, step: state.step + 1, fields: next })
}

/// One IMEX step: explicit reactions, implicit diffusion.
pub fn step_imex(
    state: &SimState,
    dt: f64,
    params: &Parameters,
    model: ModelVariant,
    solver: &SolverSettings,
    exec: Execution,
) -> Result<SimState, SimError> {
    let grid = *state.grid();
    let forcing = Forcing::new(params, &grid, state.t);
    let mut next = state.fields.clone();
    imex_update(exec, &grid, &state.fields, &forcing, params, model, dt, solver, &mut next)?;
    let t = state.t + dt;
    check_finite(t, &next)?;
    Ok(SimState { t, step: state.step + 1, fields: next })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Below,
    Above,
}

/// The most extreme out-of-bounds cell of one species after one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsEvent {
    pub t: f64,
    pub step: u64,
    pub species: &'static str,
    pub cell: usize,
    pub index: [usize; 2],
    pub value: f64,
    pub kind: BoundKind,
}

impl std::fmt::Display for BoundsEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} = {:e} {} bounds at cell {:?}, t = {}",
            self.species,
            self.value,
            match self.kind {
                BoundKind::Below => "below",
                BoundKind::Above => "above",
            },
            self.index,
            self.t
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationLog {
    /// Total events, including those not stored.
    pub count: u64,
    /// Per-species event counts below zero.
    pub below: [u64; 4],
    /// Per-species event counts above `K`.
    pub above: [u64; 4],
    pub events: Vec<BoundsEvent>,
}

impl ViolationLog {
    pub fn count_for(&self, species: &str, kind: BoundKind) -> u64 {
        let Some(i) = SPECIES.iter().position(|s| *s == species) else { return 0 };
        match kind {
            BoundKind::Below => self.below[i],
            BoundKind::Above => self.above[i],
        }
    }

    fn record(&mut self, event: BoundsEvent, cap: usize) {
        let i = SPECIES.iter().position(|s| *s == event.species).unwrap_or(0);
        match event.kind {
            BoundKind::Below => self.below[i] += 1,
            BoundKind::Above => self.above[i] += 1,
        }
        self.count += 1;
        if self.events.len() < cap {
            self.events.push(event);
        }
    }
}

fn scan_bounds(state: &SimState, k: f64) -> Vec<BoundsEvent> {
    let (lo, hi) = (-BOUNDS_TOL * k, k * (1.0 + BOUNDS_TOL));
    let grid = state.grid();
    let mut events = Vec::new();
    for (i, f) in state.fields.iter().enumerate() {
        let (mut min, mut max) = ((f64::INFINITY, 0), (f64::NEG_INFINITY, 0));
        for (c, &v) in f.values().iter().enumerate() {
            if v < min.0 {
                min = (v, c);
            }
            if v > max.0 {
                max = (v, c);
            }
        }
        let mut push = |(value, cell): (f64, usize), kind| {
            let (ix, iy) = grid.index_coords(cell);
            events.push(BoundsEvent {
                t: state.t,
                step: state.step,
                species: SPECIES[i],
                cell,
                index: [ix, iy],
                value,
                kind,
            });
        };
        if min.0 < lo {
            push(min, BoundKind::Below);
        }
        if max.0 > hi {
            push(max, BoundKind::Above);
        }
    }
    events
}

/// A stepping simulation: holds the current state, scratch buffers and the
/// bounds log.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    exec: Execution,
    state: SimState,
    next: [Field; 4],
    forcing: Forcing,
    dt: f64,
    log: ViolationLog,
    cg_iterations: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, exec: Execution) -> Result<Self, SimError> {
        scenario.validate()?;
        Self::with_initial(scenario, scenario.initial.clone(), exec)
    }

    fn with_initial(scenario: &'a Scenario, initial: [Vec<f64>; 4], exec: Execution) -> Result<Self, SimError> {
        let state = SimState::from_values(scenario.grid, initial)?;
        let next = empty_like(&state);
        Ok(Self {
            forcing: Forcing::new(&scenario.params, &scenario.grid, 0.0),
            scenario,
            exec,
            state,
            next,
            dt: scenario.effective_dt(),
            log: ViolationLog::default(),
            cg_iterations: 0,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn violations(&self) -> &ViolationLog {
        &self.log
    }

    fn step(&mut self, dt: f64) -> Result<(), SimError> {
        let sc = self.scenario;
        let grid = sc.grid;
        self.forcing.update(&sc.params, &grid, self.state.t);
        match sc.stepper {
            Stepper::Explicit => explicit_update(
                self.exec,
                &grid,
                &self.state.fields,
                &self.forcing,
                &sc.params,
                sc.model,
                dt,
                true,
                &mut self.next,
            ),
            Stepper::Imex => {
                // warm start from the current state
                for (n, c) in self.next.iter_mut().zip(&self.state.fields) {
                    n.values_mut().copy_from_slice(c.values());
                }
                self.cg_iterations += imex_update(
                    self.exec,
                    &grid,
                    &self.state.fields,
                    &self.forcing,
                    &sc.params,
                    sc.model,
                    dt,
                    &sc.solver,
                    &mut self.next,
                )?;
            }
        }
        std::mem::swap(&mut self.state.fields, &mut self.next);
        self.state.t += dt;
        self.state.step += 1;
        check_finite(self.state.t, &self.state.fields)?;

        for event in scan_bounds(&self.state, sc.params.k) {
            if sc.model == ModelVariant::Modified {
                return Err(SimError::InvariantViolation(event));
            }
            self.log.record(event, sc.max_events);
        }
        Ok(())
    }

    /// Steps until `t == target`, shortening the last step to land exactly.
    pub fn advance_to(&mut self, target: f64) -> Result<(), SimError> {
        let eps = 1e-12 * target.abs().max(1.0);
        while self.state.t < target - eps {
            let h = self.dt.min(target - self.state.t);
            self.step(h)?;
            if (self.state.t - target).abs() <= eps {
                self.state.t = target;
            }
        }
        Ok(())
    }
}

/// Per-species summary at one output time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormSample {
    pub t: f64,
    pub l2: [f64; 4],
    pub min: [f64; 4],
    pub max: [f64; 4],
    pub mean: [f64; 4],
}

impl NormSample {
    fn of(state: &SimState) -> Self {
        let bounds = state.fields.each_ref().map(crate::grid::field_bounds);
        Self {
            t: state.t,
            l2: state.l2_norms(),
            min: bounds.map(|b| b.0),
            max: bounds.map(|b| b.1),
            mean: state.means(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub converged: bool,
    /// Max over the window of the distance to the newest sample.
    pub max_distance: f64,
    /// Distance between the two newest samples over their time gap.
    pub rate: f64,
}

/// Decides whether a sampled trajectory has settled.
///
/// `history` holds `(t, values)` pairs in time order; distances are
/// `sqrt(weight · Σ (x − y)²)`, which is the `L²(Ω)` distance when `values`
/// are stacked cell values and `weight` is the cell volume. Converged when
/// every sample in the trailing `window` lies within `tol` of the newest one
/// and the newest change rate is below `tol`.
pub fn detect_convergence(history: &[(f64, Vec<f64>)], weight: f64, window: usize, tol: f64) -> Verdict {
    let not_yet = Verdict { converged: false, max_distance: f64::INFINITY, rate: f64::INFINITY };
    if window < 2 || history.len() < window {
        return not_yet;
    }
    let dist = |a: &[f64], b: &[f64]| {
        (weight * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).sqrt()
    };
    let tail = &history[history.len() - window..];
    let (t_end, last) = tail.last().unwrap();
    let max_distance = tail.iter().map(|(_, v)| dist(v, last)).fold(0.0, f64::max);
    let (t_prev, prev) = &tail[tail.len() - 2];
    let rate = dist(last, prev) / (t_end - t_prev);
    Verdict { converged: max_distance < tol && rate < tol, max_distance, rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// Time at which convergence was detected.
    pub t: Option<f64>,
    pub max_distance: f64,
    pub rate: f64,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub final_state: SimState,
    pub samples: Vec<NormSample>,
    pub violations: ViolationLog,
    pub convergence: ConvergenceReport,
    pub dt: f64,
    pub steps: u64,
    pub cg_iterations: usize,
    pub wall_clock: Duration,
}

impl SimulationResult {
    /// Largest L² norm per species over the last `window` samples.
    pub fn final_window_max(&self, window: usize) -> [f64; 4] {
        let start = self.samples.len().saturating_sub(window);
        let mut out = [0.0f64; 4];
        for s in &self.samples[start..] {
            for (o, v) in out.iter_mut().zip(s.l2) {
                *o = o.max(v);
            }
        }
        out
    }
}

/// Integrates `scenario` to `t_max` or until convergence is detected.
pub fn run(scenario: &Scenario, exec: Execution) -> Result<SimulationResult, SimError> {
    let started = Instant::now();
    let mut sim = Simulation::new(scenario, exec)?;
    let window = scenario.convergence.window;
    let tol = scenario.convergence_tol();
    let weight = scenario.grid.cell_volume();

    let mut samples = vec![NormSample::of(sim.state())];
    let mut history: VecDeque<(f64, Vec<f64>)> = VecDeque::with_capacity(window + 1);
    history.push_back((0.0, sim.state().flat()));
    let mut verdict = Verdict { converged: false, max_distance: f64::INFINITY, rate: f64::INFINITY };
    let mut converged_at = None;

    let mut k = 0u64;
    while sim.state().t < scenario.t_max {
        k += 1;
        let target = (k as f64 * scenario.output_interval).min(scenario.t_max);
        sim.advance_to(target)?;
        samples.push(NormSample::of(sim.state()));
        history.push_back((sim.state().t, sim.state().flat()));
        if history.len() > window {
            history.pop_front();
        }
        verdict = detect_convergence(history.make_contiguous(), weight, window, tol);
        if verdict.converged {
            converged_at.get_or_insert(sim.state().t);
            if scenario.convergence.stop {
                break;
            }
        }
    }

    Ok(SimulationResult {
        steps: sim.state().step,
        dt: sim.dt,
        cg_iterations: sim.cg_iterations,
        violations: sim.log.clone(),
        convergence: ConvergenceReport {
            converged: converged_at.is_some(),
            t: converged_at,
            max_distance: verdict.max_distance,
            rate: verdict.rate,
            tol,
        },
        final_state: sim.state,
        samples,
        wall_clock: started.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeSample {
    pub t: f64,
    /// `‖Z − Z_ε‖`.
    pub distance: f64,
    /// `‖Z − Z_{ε/2}‖`.
    pub distance_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub epsilon: f64,
    /// `sup_t ‖Z − Z_ε‖ / ε`; absent when `ε = 0`.
    pub ratio: Option<f64>,
    /// Same with the perturbation halved.
    pub ratio_half: Option<f64>,
    /// `|ratio − ratio_half| / ratio`.
    pub relative_change: Option<f64>,
    pub first_order: bool,
    /// Distances over the second half of the run never increase.
    pub tail_nonincreasing: bool,
    pub sup_distance: f64,
    pub samples: Vec<ProbeSample>,
}

/// Perturbation direction with unit `L²(Ω)⁴` norm.
fn unit_direction(grid: &Grid, seed: u64) -> [Vec<f64>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: [Vec<f64>; 4] =
        std::array::from_fn(|_| (0..grid.len()).map(|_| rng.random_range(-1.0..=1.0)).collect());
    let norm = (dir.iter().flatten().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt();
    for v in dir.iter_mut().flatten() {
        *v /= norm;
    }
    dir
}

/// Runs the scenario from its initial data and from two perturbations of
/// `L²` size `ε` and `ε/2` along one seeded direction, in lockstep, and
/// reports the growth of the separation.
pub fn continuous_dependence_probe(
    scenario: &Scenario,
    epsilon: f64,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport, SimError> {
    scenario.validate()?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(SimError::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let dir = unit_direction(&scenario.grid, seed);
    let perturbed = |scale: f64| -> Result<[Vec<f64>; 4], SimError> {
        let init: [Vec<f64>; 4] = std::array::from_fn(|i| {
            scenario.initial[i].iter().zip(&dir[i]).map(|(u, d)| u + scale * d).collect()
        });
        let [f, m, s, r] = &init;
        validate_initial_data([f, m, s, r], scenario.params.k)
            .map_err(|e| SimError::Config(format!("perturbed initial data leaves [0, K]: {e}")))?;
        Ok(init)
    };

    let mut base = Simulation::new(scenario, exec)?;
    let mut full = Simulation::with_initial(scenario, perturbed(epsilon)?, exec)?;
    let mut half = Simulation::with_initial(scenario, perturbed(0.5 * epsilon)?, exec)?;

    let mut samples = vec![ProbeSample {
        t: 0.0,
        distance: base.state().distance(full.state()),
        distance_half: base.state().distance(half.state()),
    }];
    let mut k = 0u64;
    while base.state().t < scenario.t_max {
        k += 1;
        let target = (k as f64 * scenario.output_interval).min(scenario.t_max);
        base.advance_to(target)?;
        full.advance_to(target)?;
        half.advance_to(target)?;
        samples.push(ProbeSample {
            t: target,
            distance: base.state().distance(full.state()),
            distance_half: base.state().distance(half.state()),
        });
    }

    let sup_distance = samples.iter().map(|s| s.distance).fold(0.0, f64::max);
    let sup_half = samples.iter().map(|s| s.distance_half).fold(0.0, f64::max);
    let (ratio, ratio_half, relative_change) = if epsilon > 0.0 {
        let r1 = sup_distance / epsilon;
        let r2 = sup_half / (0.5 * epsilon);
        (Some(r1), Some(r2), Some((r1 - r2).abs() / r1))
    } else {
        (None, None, None)
    };
    let tail = &samples[samples.len() / 2..];
    let tail_nonincreasing =
        tail.windows(2).all(|w| w[1].distance <= w[0].distance * (1.0 + 1e-9) + 1e-300);

    Ok(ProbeReport {
        epsilon,
        ratio,
        ratio_half,
        relative_change,
        first_order: relative_change.is_none_or(|c| c < 0.2),
        tail_nonincreasing,
        sup_distance,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::MuSchedule;

    fn unit(beta: f64) -> Parameters {
        Parameters::new(beta, 1.0, [1.0; 4])
    }

    #[test]
    fn stable_dt_examples() {
        let g1 = build_grid(1, &[1.0], &[10]).unwrap();
        assert!((stable_dt(&g1, 1.0, 0.9) - 0.0045).abs() < 1e-15);
        let g2 = build_grid(2, &[1.0, 1.0], &[10, 10]).unwrap();
        assert!((stable_dt(&g2, 1.0, 0.9) - 0.00225).abs() < 1e-15);
        let g3 = build_grid(1, &[2.0], &[2]).unwrap();
        assert_eq!(stable_dt(&g3, 0.5, 1.0), 1.0);
    }

    #[test]
    fn critical_point_is_a_fixed_point_of_both_steppers() {
        let g = build_grid(1, &[1.0], &[8]).unwrap();
        let mut params = unit(16.0);
        params.diffusion = [crate::model::Coefficient::Wave { mean: 1.0, amplitude: 0.5, wavenumber: 2.0, omega: 3.0 }; 4];
        let state = SimState::from_values(g, [vec![0.25; 8], vec![0.25; 8], vec![0.0; 8], vec![0.0; 8]]).unwrap();
        let e = step_explicit(&state, 1e-3, &params, ModelVariant::Modified, Execution::Sequential).unwrap();
        assert_eq!(e.fields, state.fields);
        assert_eq!(e.t, 1e-3);
        let i = step_imex(&state, 0.05, &params, ModelVariant::Modified, &SolverSettings::default(), Execution::Sequential)
            .unwrap();
        assert_eq!(i.fields, state.fields);
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = build_grid(2, &[1.0, 1.0], &[4, 4]).unwrap();
        let mut sc = Scenario::new(unit(20.0), g, [0.0; 4], 1.0);
        sc.convergence.stop = false;
        let res = run(&sc, Execution::Sequential).unwrap();
        assert!(res.final_state.fields.iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
        assert_eq!(res.samples.len(), 11);
        assert!(res.samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn imex_matches_explicit_for_constants() {
        let g = build_grid(1, &[1.0], &[6]).unwrap();
        let mut params = unit(9.0);
        params.mu = MuSchedule::Constant { mu0: 0.4 };
        let state =
            SimState::from_values(g, [vec![0.3; 6], vec![0.2; 6], vec![0.1; 6], vec![0.05; 6]]).unwrap();
        for model in [ModelVariant::Modified, ModelVariant::Original] {
            let e = step_explicit(&state, 0.01, &params, model, Execution::Sequential).unwrap();
            let i = step_imex(&state, 0.01, &params, model, &SolverSettings::default(), Execution::Sequential)
                .unwrap();
            assert_eq!(e.fields, i.fields);
        }
    }

    #[test]
    fn imex_consistency_is_first_order_in_dt() {
        let g = build_grid(1, &[1.0], &[16]).unwrap();
        let f = Field::from_fn(g, |x| 0.3 + 0.1 * (std::f64::consts::PI * x[0]).cos());
        let state = SimState::from_values(g, [f.values().to_vec(), vec![0.2; 16], vec![0.05; 16], vec![0.05; 16]])
            .unwrap();
        let params = unit(12.0);
        let change = |dt: f64| {
            let next = step_imex(&state, dt, &params, ModelVariant::Modified, &SolverSettings::default(), Execution::Sequential)
                .unwrap();
            next.distance(&state)
        };
        let (c1, c2) = (change(1e-4), change(5e-5));
        assert!((c1 / c2 - 2.0).abs() < 1e-3, "{}", c1 / c2);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let g = build_grid(1, &[1.0], &[32]).unwrap();
        let a = vec![1.0; 32];
        let b: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = b.clone();
        let settings = SolverSettings { rel_tol: 1e-14, max_iter: 2 };
        let err = solve_implicit_diffusion(Execution::Sequential, &g, &a, 10.0, &b, &mut x, &settings).unwrap_err();
        assert_eq!(err.0, 2);

        let mut x = b.clone();
        let iters = solve_implicit_diffusion(Execution::Sequential, &g, &a, 10.0, &b, &mut x, &SolverSettings::default())
            .unwrap();
        assert!(iters > 0 && iters <= 32);
        let mut ax = vec![0.0; 32];
        crate::grid::diffusion_apply_into(Execution::Sequential, &x, &a, &g, &mut ax);
        for i in 0..32 {
            assert!((x[i] - 10.0 * ax[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn convergence_on_synthetic_series() {
        let constant: Vec<(f64, Vec<f64>)> = (0..60).map(|k| (k as f64, vec![0.5, 0.1])).collect();
        assert!(detect_convergence(&constant, 1.0, 50, 1e-6).converged);

        let growing: Vec<(f64, Vec<f64>)> = (0..60).map(|k| (k as f64, vec![k as f64])).collect();
        assert!(!detect_convergence(&growing, 1.0, 50, 1e-6).converged);

        // e^{-t} decaying onto a plateau at 1, sampled every 0.1
        let series: Vec<(f64, Vec<f64>)> = (0..400)
            .map(|k| {
                let t = 0.1 * k as f64;
                (t, vec![1.0 + (-t).exp()])
            })
            .collect();
        let tol = 1e-6;
        let first = (50..=series.len())
            .find(|&n| detect_convergence(&series[..n], 1.0, 50, tol).converged)
            .expect("plateau detected");
        let t_detect = series[first - 1].0;
        // the window must start where e^{-t} < tol, i.e. t ≈ ln(1e6) = 13.8
        let plateau = tol.recip().ln();
        let window_span = 49.0 * 0.1;
        assert!(t_detect >= plateau && t_detect <= plateau + window_span + 0.1, "{t_detect}");
        assert!(!detect_convergence(&series[..10], 1.0, 50, tol).converged);
    }

    #[test]
    fn original_model_logs_instead_of_failing() {
        let g = build_grid(1, &[1.0], &[4]).unwrap();
        let mut sc = Scenario::new(unit(16.0), g, [0.4, 0.5, 0.0, 0.4], 0.2);
        sc.model = ModelVariant::Original;
        let res = run(&sc, Execution::Sequential).unwrap();
        assert!(res.violations.count_for("s", BoundKind::Below) > 0);

        sc.model = ModelVariant::Modified;
        let res = run(&sc, Execution::Sequential).unwrap();
        assert_eq!(res.violations.count, 0);
    }

    #[test]
    fn modified_model_violation_is_an_error() {
        // a forced oversized step drives f below zero
        let g = build_grid(1, &[1.0], &[4]).unwrap();
        let mut sc = Scenario::new(unit(16.0), g, [0.9, 0.9, 0.0, 0.0], 1.0);
        sc.dt = Some(0.5);
        sc.output_interval = 0.5;
        match run(&sc, Execution::Sequential) {
            Err(SimError::InvariantViolation(e)) => assert_eq!(e.kind, BoundKind::Below),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_validation_errors() {
        let g = build_grid(1, &[1.0], &[4]).unwrap();
        let mut sc = Scenario::new(unit(16.0), g, [0.2, 0.2, 0.0, 1.5], 1.0);
        assert!(matches!(sc.validate(), Err(SimError::Validation(_))));
        sc.initial[3] = vec![0.0; 4];
        sc.convergence.window = 1;
        assert!(matches!(sc.validate(), Err(SimError::Config(_))));
        sc.convergence.window = 5;
        sc.params.mu_profile = MuProfile::PerCell(vec![1.0; 3]);
        assert!(matches!(sc.validate(), Err(SimError::Config(_))));
    }

    #[test]
    fn probe_with_zero_epsilon() {
        let g = build_grid(1, &[1.0], &[8]).unwrap();
        let sc = Scenario::new(unit(8.0), g, [0.3, 0.3, 0.1, 0.1], 1.0);
        let rep = continuous_dependence_probe(&sc, 0.0, 1, Execution::Sequential).unwrap();
        assert_eq!(rep.ratio, None);
        assert_eq!(rep.sup_distance, 0.0);
        assert!(rep.samples.iter().all(|s| s.distance == 0.0));
    }
}
