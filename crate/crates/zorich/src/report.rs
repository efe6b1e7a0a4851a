//! The constants block carried by every JSON report.

use serde::{Deserialize, Serialize};
use zorich_core::dimension::{eta, q_probe, McMullen};
use zorich_core::hairs::{persistence_gap, HairConstants};
use zorich_core::MapConfig;

use crate::error::{RunError, RunResult};

/// Samples behind the density `delta` in the constants block.
pub const DELTA_SAMPLES: usize = 20_000;
/// Samples behind the persistence gap `H`.
pub const GAP_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Constants {
    pub a: f64,
    pub m: f64,
    pub M: f64,
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub eta: f64,
    /// Density of the image boxes at the base level.
    pub delta: f64,
    pub delta_se: f64,
    pub base_level: i64,
    pub q: f64,
    #[serde(rename = "H")]
    pub h: Option<f64>,
}

impl Constants {
    pub fn compute(cfg: &MapConfig, seed: u64) -> RunResult<Self> {
        let hc = HairConstants::new(cfg);
        let q = q_probe(1000);
        let lab = McMullen::new(cfg, q).map_err(RunError::experiment)?;
        let base_level = lab.base_level(DELTA_SAMPLES, seed).map_err(RunError::experiment)?;
        let density = lab.density(base_level, DELTA_SAMPLES, seed);
        Ok(Constants {
            a: cfg.shift,
            m: cfg.low_level,
            M: cfg.high_level,
            alpha: cfg.alpha,
            c1: cfg.deriv_lower,
            c2: cfg.deriv_upper,
            c3: cfg.inv_lower,
            c4: cfg.inv_upper,
            c5: cfg.inv_jac_lower,
            c6: cfg.inv_jac_upper,
            c7: hc.c7,
            c8: hc.c8,
            c9: hc.c9,
            eta: eta(cfg),
            delta: density.value,
            delta_se: density.se,
            base_level,
            q,
            h: persistence_gap(cfg, GAP_SAMPLES, seed),
        })
    }
}

/// Top level of every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub experiment: String,
    pub seed: u64,
    pub map: MapConfig,
    pub constants: Constants,
    pub passed: bool,
    pub artifacts: Vec<String>,
    pub result: T,
}
