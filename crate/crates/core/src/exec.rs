//! Sequential / data-parallel dispatch for the per-cell kernels.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] spreads work
//! over the rayon pool; without it every request runs sequentially. Only
//! element-wise maps are parallelized, never floating-point reductions, so
//! results do not depend on the thread count.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cells below this count always take the sequential path.
pub const PAR_MIN_CELLS: usize = 2048;

#[cfg(feature = "parallel")]
const PAR_MIN_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Self::Parallel
        } else {
            Self::Sequential
        }
    }
}

impl Execution {
    /// True when this request actually runs on the thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }

    #[cfg(feature = "parallel")]
    fn cells_parallel(self, n: usize) -> bool {
        self.is_parallel() && n >= PAR_MIN_CELLS
    }

    /// `out[i] = kernel(i)` for every cell.
    pub fn fill<F>(self, out: &mut [f64], kernel: F)
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.cells_parallel(out.len()) {
            out.par_iter_mut()
                .with_min_len(PAR_MIN_LEN)
                .enumerate()
                .for_each(|(i, o)| *o = kernel(i));
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = kernel(i);
        }
    }

    /// Fills four equally sized outputs from one kernel returning all four.
    pub fn fill4<F>(self, out: [&mut [f64]; 4], kernel: F)
    where
        F: Fn(usize) -> [f64; 4] + Sync + Send,
    {
        let [a, b, c, d] = out;
        let n = a.len();
        debug_assert!(b.len() == n && c.len() == n && d.len() == n);
        #[cfg(feature = "parallel")]
        if self.cells_parallel(n) {
            a.par_iter_mut()
                .zip(b.par_iter_mut())
                .zip(c.par_iter_mut())
                .zip(d.par_iter_mut())
                .with_min_len(PAR_MIN_LEN)
                .enumerate()
                .for_each(|(i, (((a, b), c), d))| {
                    let v = kernel(i);
                    (*a, *b, *c, *d) = (v[0], v[1], v[2], v[3]);
                });
            return;
        }
        for i in 0..n {
            let v = kernel(i);
            (a[i], b[i], c[i], d[i]) = (v[0], v[1], v[2], v[3]);
        }
    }

    /// Maps independent jobs, preserving input order in the output.
    pub fn map<T, R, F>(self, items: &[T], job: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(job).collect();
        }
        items.iter().map(job).collect()
    }
}
