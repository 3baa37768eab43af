//! Cell-centered rectangular grids, the flux-form diffusion operator
//! `∇·(a∇u)` with zero-flux boundaries, and discrete norms.
//!
//! Cells are stored row-major with the first axis fastest:
//! `index = j · nx + i`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("extent {axis} must be positive and finite, got {value}")]
    Extent { axis: usize, value: f64 },
    #[error("axis {axis} needs at least 2 cells, got {count}")]
    Cells { axis: usize, count: usize },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at cell {0}")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    Mismatch,
}

/// User-facing grid description; `extents` and `cells` have one entry per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, GridError> {
        if self.extents.len() != self.cells.len() {
            return Err(GridError::Length { expected: self.extents.len(), got: self.cells.len() });
        }
        build_grid(self.extents.len(), &self.extents, &self.cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    cells: [usize; 2],
    h: [f64; 2],
}

/// Builds a 1D or 2D grid; unused second-axis entries are ignored.
pub fn build_grid(dim: usize, extents: &[f64], cells: &[usize]) -> Result<Grid, GridError> {
    if !(1..=2).contains(&dim) {
        return Err(GridError::Dimension(dim));
    }
    if extents.len() < dim || cells.len() < dim {
        return Err(GridError::Length { expected: dim, got: extents.len().min(cells.len()) });
    }
    let mut g = Grid { dim, extents: [1.0; 2], cells: [1; 2], h: [1.0; 2] };
    for axis in 0..dim {
        let (e, n) = (extents[axis], cells[axis]);
        if !(e.is_finite() && e > 0.0) {
            return Err(GridError::Extent { axis, value: e });
        }
        if n < 2 {
            return Err(GridError::Cells { axis, count: n });
        }
        g.extents[axis] = e;
        g.cells[axis] = n;
        g.h[axis] = e / n as f64;
    }
    Ok(g)
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn h_min(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// `|Ω|`.
    pub fn measure(&self) -> f64 {
        self.extents().iter().product()
    }

    #[inline]
    pub fn index_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.cells[0], cell / self.cells[0])
    }

    /// Physical cell-center coordinates.
    pub fn center(&self, cell: usize) -> [f64; 2] {
        let (i, j) = self.index_coords(cell);
        [(i as f64 + 0.5) * self.h[0], if self.dim == 2 { (j as f64 + 0.5) * self.h[1] } else { 0.0 }]
    }
}

/// One value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self { grid, values: (0..grid.len()).map(|c| f(grid.center(c))).collect() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Flux-form divergence at one cell: face coefficients are arithmetic means,
/// boundary faces carry no flux.
#[inline]
pub(crate) fn diffusion_at(u: &[f64], a: &[f64], grid: &Grid, c: usize) -> f64 {
    let (i, j) = grid.index_coords(c);
    let (uc, ac) = (u[c], a[c]);
    let nx = grid.cells[0];
    let mut acc = 0.0;

    let inv = 1.0 / (grid.h[0] * grid.h[0]);
    let mut x = 0.0;
    if i > 0 {
        x += 0.5 * (a[c - 1] + ac) * (u[c - 1] - uc);
    }
    if i + 1 < nx {
        x += 0.5 * (a[c + 1] + ac) * (u[c + 1] - uc);
    }
    acc += x * inv;

    if grid.dim == 2 {
        let inv = 1.0 / (grid.h[1] * grid.h[1]);
        let mut y = 0.0;
        if j > 0 {
            y += 0.5 * (a[c - nx] + ac) * (u[c - nx] - uc);
        }
        if j + 1 < grid.cells[1] {
            y += 0.5 * (a[c + nx] + ac) * (u[c + nx] - uc);
        }
        acc += y * inv;
    }
    acc
}

/// Largest diagonal entry magnitude of the operator for coefficients bounded by `a_max`.
pub fn diffusion_diag_bound(grid: &Grid, a_max: f64) -> f64 {
    grid.spacing().iter().map(|h| 2.0 * a_max / (h * h)).sum()
}

/// `out = ∇·(a∇u)` on raw slices.
pub fn diffusion_apply_into(exec: Execution, u: &[f64], a: &[f64], grid: &Grid, out: &mut [f64]) {
    exec.fill(out, |c| diffusion_at(u, a, grid, c));
}

pub fn diffusion_apply_with(exec: Execution, u: &Field, a: &Field, grid: &Grid) -> Result<Field, GridError> {
    if u.grid != *grid || a.grid != *grid {
        return Err(GridError::Mismatch);
    }
    let mut out = vec![0.0; grid.len()];
    diffusion_apply_into(exec, &u.values, &a.values, grid, &mut out);
    Ok(Field { grid: *grid, values: out })
}

pub fn diffusion_apply(u: &Field, a: &Field, grid: &Grid) -> Result<Field, GridError> {
    diffusion_apply_with(Execution::default(), u, a, grid)
}

/// `sqrt(Σ u² · cell volume)`.
pub fn l2_norm(u: &Field) -> f64 {
    l2_norm_slice(&u.values, &u.grid)
}

pub(crate) fn l2_norm_slice(u: &[f64], grid: &Grid) -> f64 {
    (u.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume()).sqrt()
}

/// Exact `(min, max)` over cells.
pub fn field_bounds(u: &Field) -> (f64, f64) {
    u.values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_spacing() {
        let g = build_grid(1, &[1.0], &[10]).unwrap();
        assert!((g.spacing()[0] - 0.1).abs() < 1e-15);
        assert_eq!(g.len(), 10);
        let g = build_grid(2, &[1.0, 2.0], &[10, 20]).unwrap();
        assert!((g.spacing()[0] - 0.1).abs() < 1e-15 && (g.spacing()[1] - 0.1).abs() < 1e-15);
        assert_eq!(g.len(), 200);
        assert!((g.measure() - 2.0).abs() < 1e-15);
        assert_eq!(build_grid(1, &[1.0], &[0]), Err(GridError::Cells { axis: 0, count: 0 }));
        assert!(build_grid(1, &[-1.0], &[4]).is_err());
        assert!(build_grid(3, &[1.0; 3], &[4; 3]).is_err());
        let spec = GridSpec { extents: vec![1.0, 1.0], cells: vec![4] };
        assert!(spec.build().is_err());
    }

    #[test]
    fn two_cell_stencil() {
        let g = build_grid(1, &[2.0], &[2]).unwrap();
        let u = Field::new(g, vec![0.0, 1.0]).unwrap();
        let a = Field::constant(g, 1.0);
        let out = diffusion_apply(&u, &a, &g).unwrap();
        assert_eq!(out.values(), &[1.0, -1.0]);
    }

    #[test]
    fn constants_are_annihilated() {
        let g = build_grid(2, &[1.0, 0.5], &[7, 5]).unwrap();
        let u = Field::constant(g, 0.37);
        let a = Field::from_fn(g, |x| 1.0 + x[0] * x[1]);
        let out = diffusion_apply(&u, &a, &g).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_grids_rejected() {
        let g1 = build_grid(1, &[1.0], &[4]).unwrap();
        let g2 = build_grid(1, &[1.0], &[5]).unwrap();
        let u = Field::constant(g1, 1.0);
        let a = Field::constant(g2, 1.0);
        assert_eq!(diffusion_apply(&u, &a, &g1), Err(GridError::Mismatch));
        assert!(Field::new(g1, vec![1.0; 3]).is_err());
        assert_eq!(Field::new(g1, vec![1.0, f64::NAN, 0.0, 0.0]), Err(GridError::NonFinite(1)));
    }

    #[test]
    fn norms_and_bounds() {
        let g = build_grid(1, &[1.0], &[2]).unwrap();
        let u = Field::new(g, vec![3.0, 4.0]).unwrap();
        assert!((l2_norm(&u) - 12.5f64.sqrt()).abs() < 1e-15);
        let g2 = build_grid(2, &[2.0, 3.0], &[4, 6]).unwrap();
        assert!((l2_norm(&Field::constant(g2, 0.5)) - 0.5 * 6f64.sqrt()).abs() < 1e-14);
        assert_eq!(l2_norm(&Field::constant(g2, 0.0)), 0.0);

        let g3 = build_grid(1, &[1.0], &[3]).unwrap();
        assert_eq!(field_bounds(&Field::new(g3, vec![0.0, 0.5, 1.0]).unwrap()), (0.0, 1.0));
        assert_eq!(field_bounds(&Field::constant(g3, 0.3)), (0.3, 0.3));
    }

    /// Max error of the operator on u = cos(πx)cos(πy)-type profiles with
    /// a = 1 + 0.5 cos(πx); exact (a u')' computed by hand.
    fn max_error_1d(n: usize) -> f64 {
        use std::f64::consts::PI;
        let g = build_grid(1, &[1.0], &[n]).unwrap();
        let u = Field::from_fn(g, |x| (PI * x[0]).cos());
        let a = Field::from_fn(g, |x| 1.0 + 0.5 * (PI * x[0]).cos());
        let out = diffusion_apply(&u, &a, &g).unwrap();
        out.values()
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let x = g.center(c)[0];
                // d/dx[(1 + 0.5cos πx)(−π sin πx)]
                let exact = -PI * PI * (x * PI).cos() - 0.5 * PI * PI * (2.0 * PI * x).cos();
                (v - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn second_order_variable_coefficient() {
        let ratios: Vec<f64> =
            [16, 32, 64].windows(2).map(|w| max_error_1d(w[0]) / max_error_1d(w[1])).collect();
        for r in ratios {
            assert!((3.5..=4.5).contains(&r), "ratio {r}");
        }
    }

    fn grid_strategy() -> impl Strategy<Value = Grid> {
        prop_oneof![
            (2usize..12, 0.5..3.0f64).prop_map(|(n, e)| build_grid(1, &[e], &[n]).unwrap()),
            (2usize..8, 2usize..8, 0.5..3.0f64, 0.5..3.0f64)
                .prop_map(|(nx, ny, ex, ey)| build_grid(2, &[ex, ey], &[nx, ny]).unwrap()),
        ]
    }

    fn fields(g: Grid) -> impl Strategy<Value = (Grid, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = g.len();
        (
            prop::collection::vec(-1.0..1.0f64, n),
            prop::collection::vec(-1.0..1.0f64, n),
            prop::collection::vec(0.2..3.0f64, n),
        )
            .prop_map(move |(u, v, a)| (g, u, v, a))
    }

    proptest! {
        #[test]
        fn operator_is_conservative_symmetric_and_dissipative(
            (g, u, v, a) in grid_strategy().prop_flat_map(fields)
        ) {
            let n = g.len();
            let mut au = vec![0.0; n];
            let mut av = vec![0.0; n];
            diffusion_apply_into(Execution::Sequential, &u, &a, &g, &mut au);
            diffusion_apply_into(Execution::Sequential, &v, &a, &g, &mut av);
            let vol = g.cell_volume();
            let scale: f64 = au.iter().map(|x| x.abs()).sum::<f64>() * vol + 1.0;
            let mass: f64 = au.iter().sum::<f64>() * vol;
            prop_assert!(mass.abs() <= 1e-13 * scale);

            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() * vol;
            let (vau, uav) = (dot(&v, &au), dot(&u, &av));
            prop_assert!((vau - uav).abs() <= 1e-12 * (vau.abs() + uav.abs() + 1.0));
            prop_assert!(dot(&u, &au) <= 1e-12);

            // linearity
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
            let mut aw = vec![0.0; n];
            diffusion_apply_into(Execution::Parallel, &w, &a, &g, &mut aw);
            for c in 0..n {
                prop_assert!((aw[c] - (2.0 * au[c] - 0.5 * av[c])).abs() <= 1e-9 * (1.0 + aw[c].abs()));
            }
        }
    }
}
