//! Simulation, invariant monitoring and stability analysis for a modified
//! Trojan Y chromosome reaction-diffusion model of four interacting
//! populations `(f, m, s, r)` on a rectangular domain with zero-flux
//! boundaries.
//!
//! * [`model`]: pointwise kinetics, parameters and their validation.
//! * [`grid`]: finite-volume grids, the diffusion operator and norms.
//! * [`integrator`]: explicit and IMEX time stepping, bounds monitoring,
//!   convergence detection and the continuous-dependence probe.
//! * [`analysis`]: constant steady states and their linear stability.
//! * [`bifurcation`]: β sweeps and transition detection.
//! * [`config`], [`report`], [`cli`]: configuration documents, artifacts and
//!   the command-line harness.
//!
//! Per-cell kernels and sweeps run on rayon when the `parallel` feature is
//! enabled (the default); see [`exec::Execution`].

pub mod analysis;
pub mod bifurcation;
pub mod cli;
pub mod config;
pub mod exec;
pub mod grid;
pub mod integrator;
pub mod model;
pub mod report;

pub use exec::Execution;
