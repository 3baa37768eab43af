use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tyc::analysis::{steady_states, Branch, Stability};
use tyc::bifurcation::{linspace, sweep, SweepOptions};
use tyc::grid::{build_grid, Grid};
use tyc::integrator::{run, Scenario, Stepper};
use tyc::model::{Coefficient, MuSchedule, Parameters};
use tyc::Execution;

fn line(n: usize) -> Grid {
    build_grid(1, &[1.0], &[n]).unwrap()
}

fn random_fields(grid: &Grid, seed: u64, scale: f64) -> [Vec<f64>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::array::from_fn(|_| (0..grid.len()).map(|_| rng.random_range(0.0..scale)).collect())
}

#[test]
fn parallel_and_sequential_runs_are_bitwise_equal() {
    // 64 x 64 is above the parallel cutoff
    let grid = build_grid(2, &[1.0, 1.0], &[64, 64]).unwrap();
    let mut p = Parameters::new(32.0, 1.0, [1.0; 4]);
    p.diffusion[1] = Coefficient::Wave { mean: 1.0, amplitude: 0.4, wavenumber: 2.0, omega: 1.0 };
    p.mu = MuSchedule::ExponentialDecay { mu0: 0.5, gamma: 1.0 };
    for stepper in [Stepper::Explicit, Stepper::Imex] {
        let mut sc = Scenario::new(p.clone(), grid, [0.0; 4], 0.05);
        sc.initial = random_fields(&grid, 21, 0.3);
        sc.stepper = stepper;
        sc.output_interval = 0.01;
        let a = run(&sc, Execution::Sequential).unwrap();
        let b = run(&sc, Execution::Parallel).unwrap();
        assert_eq!(a.final_state, b.final_state, "{stepper:?}");
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.cg_iterations, b.cg_iterations);
    }
}

#[test]
fn imex_and_explicit_agree() {
    let grid = line(64);
    let mut p = Parameters::new(24.0, 1.0, [1.0, 0.8, 1.0, 1.0]);
    p.diffusion = [Coefficient::Constant(0.5), Coefficient::Constant(1.0), Coefficient::Constant(0.2), Coefficient::Constant(2.0)];
    p.mu = MuSchedule::Constant { mu0: 0.3 };
    let mut sc = Scenario::new(p, grid, [0.0; 4], 2.0);
    sc.initial = [0, 1, 2, 3].map(|s| {
        (0..64).map(|i| 0.2 + 0.1 * ((i as f64 + 0.5) / 64.0 * std::f64::consts::PI * (s + 1) as f64).cos()).collect()
    });
    sc.convergence.stop = false;
    let explicit = run(&sc, Execution::default()).unwrap();
    sc.stepper = Stepper::Imex;
    sc.dt = Some(1e-3);
    let imex = run(&sc, Execution::default()).unwrap();
    let scale = explicit.final_state.l2_norms().iter().copied().fold(0.0, f64::max);
    let gap = explicit.final_state.distance(&imex.final_state);
    assert!(gap < 1e-2 * scale, "gap {gap}, scale {scale}");
    assert!(imex.cg_iterations > 0);
}

#[test]
fn plus_branch_attracts_and_minus_branch_repels() {
    let p = Parameters::new(32.0, 1.0, [1.0; 4]);
    let ss = steady_states(&p.reduced());
    let plus = ss.iter().find(|s| s.branch == Branch::Plus).unwrap();
    let minus = ss.iter().find(|s| s.branch == Branch::Minus).unwrap();
    let final_mean = |f: f64, m: f64| {
        let mut sc = Scenario::new(p.clone(), line(8), [f, m, 0.0, 0.0], 60.0);
        sc.convergence.stop = false;
        let mean = run(&sc, Execution::Sequential).unwrap().final_state.means();
        [mean[0], mean[1]]
    };
    for start in [0.9, 1.1] {
        let [f, m] = final_mean(start * plus.f, start * plus.m);
        assert!((f - plus.f).abs() < 1e-6 && (m - plus.m).abs() < 1e-6, "{start}: ({f}, {m})");
    }
    let [f, m] = final_mean(1.1 * minus.f, 1.1 * minus.m);
    assert!((f - plus.f).abs() < 1e-6 && (m - plus.m).abs() < 1e-6, "above minus: ({f}, {m})");
    let [f, m] = final_mean(0.9 * minus.f, 0.9 * minus.m);
    assert!(f < 1e-8 && m < 1e-8, "below minus: ({f}, {m})");
}

#[test]
fn sweep_states_settle_on_stable_branches() {
    let base = {
        let mut sc = Scenario::new(Parameters::new(16.0, 1.0, [1.0; 4]), line(8), [0.0; 4], 200.0);
        sc.stepper = Stepper::Imex;
        sc.dt = Some(0.02);
        sc.output_interval = 0.5;
        sc
    };
    let betas = linspace(8.0, 32.0, 13);
    for branch_seed in [tyc::bifurcation::SeedBranch::Plus, tyc::bifurcation::SeedBranch::Minus] {
        let opts = SweepOptions { branch: branch_seed, ..SweepOptions::default() };
        let records = sweep(&betas, &base, &opts, Execution::default()).unwrap();
        for r in &records {
            let near = r
                .branches
                .iter()
                .filter(|s| s.classification == Stability::Stable)
                .any(|s| (r.mean[0] - s.f).abs() < 1e-4 && (r.mean[1] - s.m).abs() < 1e-4);
            assert!(near, "beta {}: mean ({}, {}) not near a stable branch", r.beta, r.mean[0], r.mean[1]);
            assert!(r.converged, "beta {}", r.beta);
        }
    }
}

#[test]
fn introduced_species_vanish_and_totals_stay_below_capacity() {
    let grid = line(32);
    let mut p = Parameters::new(40.0, 2.0, [1.0, 1.0, 0.7, 0.5]);
    p.mu = MuSchedule::StepOff { mu0: 1.5, t_off: 2.0 };
    let mut sc = Scenario::new(p, grid, [0.0; 4], 30.0);
    sc.initial = random_fields(&grid, 4, 0.5);
    sc.convergence.stop = false;
    let res = run(&sc, Execution::default()).unwrap();
    assert_eq!(res.violations.count, 0);
    let l2 = res.final_state.l2_norms();
    assert!(l2[2] < 1e-4 && l2[3] < 1e-4, "{l2:?}");
    for c in 0..grid.len() {
        assert!(res.final_state.point(c).total() <= 2.0 * (1.0 + 1e-10));
    }
}
