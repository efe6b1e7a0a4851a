//! Worker pool sized by `ZORICH_THREADS`, and the parallel drivers.
//! Every driver assembles results in a fixed order, so output does not
//! depend on the worker count.

use rayon::prelude::*;
use zorich_core::dimension::{classify_cell, finish_count, grid_dims, BoxCount, Probe, ProbeGrid};
use zorich_core::sampling::Aabb;
use zorich_core::Vec3;

use crate::error::{RunError, RunResult};

pub const THREADS_VAR: &str = "ZORICH_THREADS";

/// Worker count from `ZORICH_THREADS`, `None` when unset.
pub fn threads_from_env() -> RunResult<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(RunError::Config(format!("{THREADS_VAR}: {e}"))),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn pool(threads: Option<usize>) -> RunResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| RunError::Config(format!("thread pool: {e}")))
}

/// `f(row, col)` over a `width x height` grid, row-major.
pub fn map_grid<T, F>(width: usize, height: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    (0..height)
        .into_par_iter()
        .flat_map_iter(|row| {
            let f = &f;
            (0..width).map(move |col| f(row, col))
        })
        .collect()
}

/// Parallel version of [`zorich_core::dimension::box_count`].
pub fn box_count_par<C>(classifier: &C, window: &Aabb, scales: &[f64], probes: ProbeGrid) -> RunResult<BoxCount>
where
    C: Fn(Vec3) -> Probe + Sync,
{
    let mut counts = Vec::with_capacity(scales.len());
    let mut flagged = Vec::with_capacity(scales.len());
    for &eps in scales {
        let dims = grid_dims(window, eps);
        let per_axis = probes.per_axis(eps);
        let (c, f) = (0..dims[0])
            .into_par_iter()
            .map(|i| {
                let (mut c, mut f) = (0u64, 0u64);
                for j in 0..dims[1] {
                    for k in 0..dims[2] {
                        match classify_cell(classifier, window, eps, [i, j, k], per_axis) {
                            Probe::In => c += 1,
                            Probe::Unknown => {
                                c += 1;
                                f += 1;
                            }
                            Probe::Out => {}
                        }
                    }
                }
                (c, f)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        counts.push(c);
        flagged.push(f);
    }
    finish_count(scales, counts, flagged).map_err(RunError::experiment)
}
