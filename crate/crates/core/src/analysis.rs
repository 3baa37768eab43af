//! Constant steady states of the reduced `(f, m)` system, their Jacobians,
//! eigenvalues and stability.
//!
//! With `S = f + m` an interior equilibrium satisfies `S(1 − S/K) = 2(d₁+d₂)/β`,
//! which has real roots only for `β ≥ β₀ = 8(d₁+d₂)/K`. The roots are
//! `S = K(1 ± b)/2` with `b = √(1 − β₀/β)`, split as `f : m = d₂ : d₁`.
//!
//! Stability is decided from the computed eigenvalues. At the double root
//! (`β = β₀`) the Jacobian is singular and its spectrum is `{0, tr A}`.
//! For `β > β₀` the upper branch (`1 + b`) has `det A > 0` and is a stable node.
//! The lower branch (`1 − b`) has `det A < 0` and is a saddle; it separates
//! extinction from survival.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::model::{reaction_reduced, ReducedParams};

/// Spectral abscissa band treated as zero.
pub const HYPERBOLIC_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("beta = {beta} is below the critical value {critical}")]
    BelowCritical { beta: f64, critical: f64 },
    #[error("beta = {beta} must exceed the critical value {critical}")]
    NotAboveCritical { beta: f64, critical: f64 },
}

pub type Matrix2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Origin,
    /// The double root at `β = β₀`.
    Critical,
    /// `S = K(1 + b)/2`.
    Plus,
    /// `S = K(1 − b)/2`.
    Minus,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Self::Origin => "origin",
            Self::Critical => "critical",
            Self::Plus => "plus",
            Self::Minus => "minus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    NonHyperbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub branch: Branch,
    pub f: f64,
    pub m: f64,
    pub jacobian: Matrix2,
    #[serde(serialize_with = "ser_complex_pair")]
    pub eigenvalues: [Complex64; 2],
    pub classification: Stability,
    pub trace: f64,
    pub determinant: f64,
    /// Verdict of the trace/determinant rule, kept as a cross-check.
    pub trace_det_verdict: Stability,
    /// `max |F| / (β K²)` at the state.
    pub residual: f64,
}

fn ser_complex_pair<S: serde::Serializer>(v: &[Complex64; 2], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(2))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

/// `β₀ = 8(d₁ + d₂)/K`.
pub fn critical_beta(d1: f64, d2: f64, k: f64) -> f64 {
    8.0 * (d1 + d2) / k
}

/// `b = √(1 − 8(d₁+d₂)/(Kβ))`, defined for `β ≥ β₀`.
pub fn branch_parameter(beta: f64, d1: f64, d2: f64, k: f64) -> Result<f64, AnalysisError> {
    let disc = discriminant(beta, d1, d2, k);
    if disc < 0.0 {
        return Err(AnalysisError::BelowCritical { beta, critical: critical_beta(d1, d2, k) });
    }
    Ok(disc.sqrt())
}

fn discriminant(beta: f64, d1: f64, d2: f64, k: f64) -> f64 {
    1.0 - 8.0 * (d1 + d2) / (k * beta)
}

/// The four partial derivatives of the reduced kinetics.
pub fn jacobian(f: f64, m: f64, p: &ReducedParams) -> Matrix2 {
    let g1 = 1.0 - (f + m) / p.k;
    let half_beta = 0.5 * p.beta;
    let df = half_beta * m * (g1 - f / p.k);
    let dm = half_beta * f * (g1 - m / p.k);
    [[df - p.d1, dm], [df, dm - p.d2]]
}

/// Roots of `λ² − tr·λ + det = 0`.
pub fn eigenvalues_2x2(m: &Matrix2) -> [Complex64; 2] {
    let [[a, b], [c, d]] = *m;
    let tr = a + d;
    let det = a * d - b * c;
    // (a − d)² + 4bc avoids cancellation in tr² − 4det
    let disc = (a - d) * (a - d) + 4.0 * b * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let big = 0.5 * (tr + if tr >= 0.0 { sq } else { -sq });
        let small = if big != 0.0 { det / big } else { 0.5 * (tr - sq) };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im)]
    }
}

/// Stable / unstable / non-hyperbolic from the largest real part.
pub fn classify(eigenvalues: &[Complex64; 2]) -> Stability {
    let abscissa = eigenvalues[0].re.max(eigenvalues[1].re);
    if abscissa < -HYPERBOLIC_TOL {
        Stability::Stable
    } else if abscissa > HYPERBOLIC_TOL {
        Stability::Unstable
    } else {
        Stability::NonHyperbolic
    }
}

/// Stable iff `tr < 0` and `det > 0`. The zero band on `det` matches the
/// eigenvalue band: the small root is `det / λ_big` with `|λ_big| ≈ |tr|`.
pub fn trace_det_rule(trace: f64, det: f64) -> Stability {
    let det_eps = HYPERBOLIC_TOL * trace.abs().max(HYPERBOLIC_TOL);
    if det < -det_eps || trace > 2.0 * HYPERBOLIC_TOL {
        Stability::Unstable
    } else if det > det_eps && trace < -2.0 * HYPERBOLIC_TOL {
        Stability::Stable
    } else {
        Stability::NonHyperbolic
    }
}

fn build(branch: Branch, f: f64, m: f64, p: &ReducedParams) -> SteadyState {
    let jac = jacobian(f, m, p);
    let eig = eigenvalues_2x2(&jac);
    let trace = jac[0][0] + jac[1][1];
    let determinant = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let [r1, r2] = reaction_reduced(f, m, p);
    SteadyState {
        branch,
        f,
        m,
        jacobian: jac,
        eigenvalues: eig,
        classification: classify(&eig),
        trace,
        determinant,
        trace_det_verdict: trace_det_rule(trace, determinant),
        residual: r1.abs().max(r2.abs()) / (p.beta * p.k * p.k),
    }
}

/// Every constant steady state `(f*, m*, 0, 0)`: one below `β₀`, two at
/// `β₀`, three above.
pub fn steady_states(p: &ReducedParams) -> Vec<SteadyState> {
    let mut out = vec![build(Branch::Origin, 0.0, 0.0, p)];
    let disc = discriminant(p.beta, p.d1, p.d2, p.k);
    let split = p.k / (2.0 * (p.d1 + p.d2));
    if disc == 0.0 {
        out.push(build(Branch::Critical, 4.0 * p.d2 / p.beta, 4.0 * p.d1 / p.beta, p));
    } else if disc > 0.0 {
        let b = disc.sqrt();
        for (branch, w) in [(Branch::Plus, 1.0 + b), (Branch::Minus, 1.0 - b)] {
            out.push(build(branch, split * p.d2 * w, split * p.d1 * w, p));
        }
    }
    out
}

/// `8(d₁+d₂)/(K(1 − b)²)`, reported next to the numerical verdict for the
/// lower branch. Algebraically equal to `β(1 + b)/(1 − b)`.
pub fn stability_threshold_minus_branch(p: &ReducedParams) -> Result<f64, AnalysisError> {
    let disc = discriminant(p.beta, p.d1, p.d2, p.k);
    if disc <= 0.0 {
        return Err(AnalysisError::NotAboveCritical {
            beta: p.beta,
            critical: critical_beta(p.d1, p.d2, p.k),
        });
    }
    let b = disc.sqrt();
    Ok(critical_beta(p.d1, p.d2, p.k) / ((1.0 - b) * (1.0 - b)))
}

/// Summary written by the `steady-states` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateReport {
    pub beta: f64,
    pub k: f64,
    pub d1: f64,
    pub d2: f64,
    pub critical_beta: f64,
    pub branch_parameter: Option<f64>,
    pub minus_branch_threshold: Option<f64>,
    pub branches: Vec<SteadyState>,
}

pub fn steady_state_report(p: &ReducedParams) -> SteadyStateReport {
    SteadyStateReport {
        beta: p.beta,
        k: p.k,
        d1: p.d1,
        d2: p.d2,
        critical_beta: critical_beta(p.d1, p.d2, p.k),
        branch_parameter: branch_parameter(p.beta, p.d1, p.d2, p.k).ok(),
        minus_branch_threshold: stability_threshold_minus_branch(p).ok(),
        branches: steady_states(p),
    }
}
