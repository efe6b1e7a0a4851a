//! File formats, parallel drivers, the planar oracle and experiment
//! orchestration on top of `zorich-core`.

pub mod args;
pub mod boxdim;
pub mod error;
pub mod io;
pub mod parallel;
pub mod planar;
pub mod render;
pub mod report;
pub mod run;

pub use error::{RunError, RunResult};
pub use run::{run, Experiment, MapSource, Params, RunConfig, RunSummary};

/// Runs `config` on a pool sized by `ZORICH_THREADS`.
pub fn run_with_env_threads(config: &RunConfig) -> RunResult<RunSummary> {
    let pool = parallel::pool(parallel::threads_from_env()?)?;
    pool.install(|| run(config))
}
