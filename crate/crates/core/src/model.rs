//! Pointwise model definitions: growth factors, reaction kernels for the
//! modified, original and reduced systems, parameter validation and
//! introduction-rate schedules.
//!
//! Species order is always `(f, m, s, r)`:
//!
//! | symbol | population                                   |
//! |--------|----------------------------------------------|
//! | `f`    | XX female (natural female)                   |
//! | `m`    | XY male (natural male)                       |
//! | `s`    | YY supermale (offspring of `r`)              |
//! | `r`    | YY sex-reversed female (artificially stocked) |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPECIES: [&str; 4] = ["f", "m", "s", "r"];

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("non-finite reaction rate for species {species}")]
    NonFiniteRate { species: &'static str },
    #[error("carrying capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),
    #[error("negative density {value} for species {species}")]
    NegativeDensity { species: &'static str, value: f64 },
}

/// Densities of the four species at a single point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatePoint {
    pub f: f64,
    pub m: f64,
    pub s: f64,
    pub r: f64,
}

impl StatePoint {
    pub const fn new(f: f64, m: f64, s: f64, r: f64) -> Self {
        Self { f, m, s, r }
    }

    /// Builds a point that is a valid model state: finite and nonnegative.
    pub fn checked(f: f64, m: f64, s: f64, r: f64) -> Result<Self, ModelError> {
        let p = Self::new(f, m, s, r);
        for (name, v) in SPECIES.iter().zip(p.to_array()) {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteInput("StatePoint"));
            }
            if v < 0.0 {
                return Err(ModelError::NegativeDensity { species: name, value: v });
            }
        }
        Ok(p)
    }

    pub const fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.f, self.m, self.s, self.r]
    }

    pub fn total(&self) -> f64 {
        self.f + self.m + self.s + self.r
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Which reaction kinetics drive a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Births of `m` and `s` use the clipped growth factor, `r` grows as `μ r g`.
    #[default]
    Modified,
    /// Unclipped growth everywhere and a constant source `μ` for `r`.
    Original,
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Modified => f.write_str("modified"),
            Self::Original => f.write_str("original"),
        }
    }
}

/// Time dependence of the introduction rate `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MuSchedule {
    Constant { mu0: f64 },
    ExponentialDecay { mu0: f64, gamma: f64 },
    StepOff { mu0: f64, t_off: f64 },
}

impl Default for MuSchedule {
    fn default() -> Self {
        Self::Constant { mu0: 0.0 }
    }
}

impl MuSchedule {
    /// Value of `μ` at time `t ≥ 0`.
    pub fn sample(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { mu0 } => mu0,
            Self::ExponentialDecay { mu0, gamma } => mu0 * (-gamma * t).exp(),
            Self::StepOff { mu0, t_off } => {
                if t < t_off {
                    mu0
                } else {
                    0.0
                }
            }
        }
    }

    /// Largest value the schedule ever takes.
    pub fn peak(&self) -> f64 {
        match *self {
            Self::Constant { mu0 }
            | Self::ExponentialDecay { mu0, .. }
            | Self::StepOff { mu0, .. } => mu0,
        }
    }

    /// True when `μ(t) → 0` as `t → ∞`.
    pub fn decays(&self) -> bool {
        match *self {
            Self::Constant { mu0 } => mu0 == 0.0,
            Self::ExponentialDecay { mu0, gamma } => mu0 == 0.0 || gamma > 0.0,
            Self::StepOff { .. } => true,
        }
    }
}

/// Free-function form of [`MuSchedule::sample`].
pub fn mu_sample(schedule: &MuSchedule, t: f64) -> f64 {
    schedule.sample(t)
}

/// Spatial multiplier applied to `μ(t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuProfile {
    #[default]
    Uniform,
    PerCell(Vec<f64>),
}

impl MuProfile {
    pub fn at(&self, cell: usize) -> f64 {
        match self {
            Self::Uniform => 1.0,
            Self::PerCell(v) => v[cell],
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Self::Uniform => 1.0,
            Self::PerCell(v) => v.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// A diffusion coefficient `a(x, t)`.
///
/// `Wave` is `mean + amplitude · cos(wavenumber · π · x/L) · cos(omega · t)`
/// with `x/L` the relative position along the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Wave {
        mean: f64,
        amplitude: f64,
        #[serde(default = "one")]
        wavenumber: f64,
        #[serde(default)]
        omega: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for Coefficient {
    fn default() -> Self {
        Self::Constant(1.0)
    }
}

impl Coefficient {
    pub fn sample(&self, rel_x: f64, t: f64) -> f64 {
        match *self {
            Self::Constant(a) => a,
            Self::Wave { mean, amplitude, wavenumber, omega } => {
                mean + amplitude
                    * (wavenumber * std::f64::consts::PI * rel_x).cos()
                    * (omega * t).cos()
            }
        }
    }

    /// Closed-form range `[min, max]` over all space and time.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Self::Constant(a) => (a, a),
            Self::Wave { mean, amplitude, .. } => (mean - amplitude.abs(), mean + amplitude.abs()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
            || matches!(self, Self::Wave { amplitude, .. } if *amplitude == 0.0)
    }
}

/// The four constants of the two-species reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub beta: f64,
    pub k: f64,
    pub d1: f64,
    pub d2: f64,
}

/// All model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub beta: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// Death rates `d₁..d₄`.
    pub death: [f64; 4],
    /// Diffusion coefficients `a₁..a₄`.
    #[serde(default = "default_diffusion")]
    pub diffusion: [Coefficient; 4],
    #[serde(default)]
    pub mu: MuSchedule,
    #[serde(default)]
    pub mu_profile: MuProfile,
    /// Diffusion bound: every coefficient must lie in `[a0, 1/a0]`.
    #[serde(default = "default_a0")]
    pub a0: f64,
    /// Lower bound on death rates.
    #[serde(rename = "D0", default = "default_d_lo")]
    pub d_lo: f64,
    /// Upper bound on death rates and `μ`.
    #[serde(rename = "D1", default = "default_d_hi")]
    pub d_hi: f64,
    /// Use `g⁺` in every equation instead of only the `m` and `s` births.
    #[serde(default)]
    pub clip_all_growth: bool,
}

fn default_diffusion() -> [Coefficient; 4] {
    [Coefficient::Constant(1.0); 4]
}
fn default_a0() -> f64 {
    0.01
}
fn default_d_lo() -> f64 {
    1e-6
}
fn default_d_hi() -> f64 {
    1e6
}

impl Parameters {
    /// Constant unit diffusion, zero `μ`, permissive bounds.
    pub fn new(beta: f64, k: f64, death: [f64; 4]) -> Self {
        Self {
            beta,
            k,
            death,
            diffusion: default_diffusion(),
            mu: MuSchedule::default(),
            mu_profile: MuProfile::Uniform,
            a0: default_a0(),
            d_lo: default_d_lo(),
            d_hi: default_d_hi(),
            clip_all_growth: false,
        }
    }

    pub fn reduced(&self) -> ReducedParams {
        ReducedParams { beta: self.beta, k: self.k, d1: self.death[0], d2: self.death[1] }
    }

    pub fn max_diffusion(&self) -> f64 {
        self.diffusion.iter().map(|c| c.range().1).fold(0.0, f64::max)
    }

    /// Upper bound on the magnitude of the per-unit-density reaction rates
    /// for states with every species in `[0, K]`.
    pub fn reaction_rate_bound(&self) -> f64 {
        let d_max = self.death.iter().copied().fold(0.0, f64::max);
        1.5 * self.beta * self.k + d_max + 3.0 * self.mu.peak() * self.mu_profile.max()
    }

    /// Checks every standing hypothesis on the constants.
    pub fn validate(&self) -> Result<(), ValidationError> {
        validate_params(self)
    }
}

/// A hypothesis of the model that input data must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hypothesis {
    Positivity,
    DiffusionBounds,
    DeathRateBounds,
    IntroductionRateBounds,
    InitialDataBounds,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Positivity => "positivity of beta, K and bounds",
            Self::DiffusionBounds => "diffusion bounds a0 <= a_i <= 1/a0",
            Self::DeathRateBounds => "death-rate bounds D0 <= d_i <= D1",
            Self::IntroductionRateBounds => "introduction-rate bounds 0 <= mu <= D1",
            Self::InitialDataBounds => "initial data bounds 0 <= f0, m0, s0, r0 <= K",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub hypothesis: Hypothesis,
    pub field: String,
    pub value: f64,
    pub bound: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} violates {} ({})", self.field, self.value, self.hypothesis, self.bound)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[error("{}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

fn check(
    out: &mut Vec<Violation>,
    ok: bool,
    hypothesis: Hypothesis,
    field: impl Into<String>,
    value: f64,
    bound: impl Into<String>,
) {
    if !ok {
        out.push(Violation { hypothesis, field: field.into(), value, bound: bound.into() });
    }
}

/// Reports every violated hypothesis on the constants, not just the first.
pub fn validate_params(p: &Parameters) -> Result<(), ValidationError> {
    use Hypothesis::*;
    let mut v = Vec::new();
    let pos = |x: f64| x.is_finite() && x > 0.0;
    check(&mut v, pos(p.beta), Positivity, "beta", p.beta, "beta > 0");
    check(&mut v, pos(p.k), Positivity, "K", p.k, "K > 0");
    check(&mut v, pos(p.a0) && p.a0 <= 1.0, Positivity, "a0", p.a0, "0 < a0 <= 1");
    check(&mut v, pos(p.d_lo), Positivity, "D0", p.d_lo, "D0 > 0");
    check(&mut v, pos(p.d_hi) && p.d_hi >= p.d_lo, Positivity, "D1", p.d_hi, "D1 >= D0");

    if pos(p.a0) {
        let (lo, hi) = (p.a0, 1.0 / p.a0);
        for (i, c) in p.diffusion.iter().enumerate() {
            let (cmin, cmax) = c.range();
            let name = format!("a{}", i + 1);
            check(&mut v, cmin.is_finite() && cmin >= lo, DiffusionBounds, &name, cmin, format!(">= {lo}"));
            check(&mut v, cmax.is_finite() && cmax <= hi, DiffusionBounds, &name, cmax, format!("<= {hi}"));
        }
    }
    for (i, &d) in p.death.iter().enumerate() {
        check(
            &mut v,
            d.is_finite() && d >= p.d_lo && d <= p.d_hi,
            DeathRateBounds,
            format!("d{}", i + 1),
            d,
            format!("[{}, {}]", p.d_lo, p.d_hi),
        );
    }
    let mu_max = p.mu.peak() * p.mu_profile.max();
    check(&mut v, p.mu.peak() >= 0.0, IntroductionRateBounds, "mu.mu0", p.mu.peak(), ">= 0");
    check(&mut v, mu_max <= p.d_hi, IntroductionRateBounds, "mu", mu_max, format!("<= {}", p.d_hi));
    match p.mu {
        MuSchedule::ExponentialDecay { gamma, .. } => {
            check(&mut v, gamma >= 0.0, IntroductionRateBounds, "mu.gamma", gamma, ">= 0")
        }
        MuSchedule::StepOff { t_off, .. } => {
            check(&mut v, t_off >= 0.0, IntroductionRateBounds, "mu.t_off", t_off, ">= 0")
        }
        MuSchedule::Constant { .. } => {}
    }
    if let MuProfile::PerCell(mult) = &p.mu_profile {
        if let Some((i, &x)) = mult.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            check(&mut v, false, IntroductionRateBounds, format!("mu_profile[{i}]"), x, ">= 0");
        }
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { violations: v })
    }
}

/// Checks `0 ≤ u ≤ K` pointwise for each of the four initial fields.
pub fn validate_initial_data(fields: [&[f64]; 4], k: f64) -> Result<(), ValidationError> {
    let mut v = Vec::new();
    for (name, field) in SPECIES.iter().zip(fields) {
        if let Some((i, &x)) =
            field.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0 && **x <= k))
        {
            v.push(Violation {
                hypothesis: Hypothesis::InitialDataBounds,
                field: format!("{name}0[{i}]"),
                value: x,
                bound: format!("[0, {k}]"),
            });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { violations: v })
    }
}

/// `g = 1 − (f + m + s + r)/K`; negative above capacity.
pub fn growth_factor(p: &StatePoint, k: f64) -> Result<f64, ModelError> {
    if !p.is_finite() || !k.is_finite() {
        return Err(ModelError::NonFiniteInput("growth_factor"));
    }
    if k <= 0.0 {
        return Err(ModelError::NonPositiveCapacity(k));
    }
    Ok(growth(p, k))
}

/// `g⁺ = max(g, 0)`.
pub fn clipped_growth_factor(p: &StatePoint, k: f64) -> Result<f64, ModelError> {
    growth_factor(p, k).map(|g| g.max(0.0))
}

#[inline]
fn growth(p: &StatePoint, k: f64) -> f64 {
    1.0 - p.total() / k
}

fn finite_rates(rates: [f64; 4]) -> Result<[f64; 4], ModelError> {
    match rates.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(ModelError::NonFiniteRate { species: SPECIES[i] }),
        None => Ok(rates),
    }
}

/// Reaction terms of the modified system.
pub fn reaction_modified(
    p: &StatePoint,
    params: &Parameters,
    mu_value: f64,
) -> Result<[f64; 4], ModelError> {
    finite_rates(modified_rates(p, params, mu_value))
}

/// Unchecked kernel behind [`reaction_modified`].
#[inline]
pub(crate) fn modified_rates(p: &StatePoint, params: &Parameters, mu: f64) -> [f64; 4] {
    let StatePoint { f, m, s, r } = *p;
    let beta = params.beta;
    let [d1, d2, d3, d4] = params.death;
    let g = growth(p, params.k);
    let gp = g.max(0.0);
    let g_fr = if params.clip_all_growth { gp } else { g };
    [
        0.5 * beta * f * m * g_fr - d1 * f,
        beta * (0.5 * f * m + 0.5 * r * m + f * s) * gp - d2 * m,
        beta * (0.5 * r * m + r * s) * gp - d3 * s,
        mu * r * g_fr - d4 * r,
    ]
}

/// Reaction terms of the original system with a single death rate `d`.
pub fn reaction_original(
    p: &StatePoint,
    beta: f64,
    k: f64,
    d: f64,
    mu_value: f64,
) -> Result<[f64; 4], ModelError> {
    if ![beta, k, d, mu_value].iter().all(|x| x.is_finite()) || !p.is_finite() {
        return Err(ModelError::NonFiniteInput("reaction_original"));
    }
    finite_rates(original_rates(p, beta, k, [d; 4], mu_value))
}

/// Original kinetics with per-species death rates.
#[inline]
pub(crate) fn original_rates(p: &StatePoint, beta: f64, k: f64, death: [f64; 4], mu: f64) -> [f64; 4] {
    let StatePoint { f, m, s, r } = *p;
    let g = growth(p, k);
    [
        0.5 * beta * f * m * g - death[0] * f,
        beta * (0.5 * f * m + 0.5 * r * m + f * s) * g - death[1] * m,
        beta * (0.5 * r * m + r * s) * g - death[2] * s,
        mu - death[3] * r,
    ]
}

/// Reaction terms of the two-species system obtained with `s = r = 0`,
/// using `g₁ = 1 − (f + m)/K`.
pub fn reaction_reduced(f: f64, m: f64, params: &ReducedParams) -> [f64; 2] {
    let g1 = 1.0 - (f + m) / params.k;
    let birth = 0.5 * params.beta * f * m * g1;
    [birth - params.d1 * f, birth - params.d2 * m]
}
