//! Box-counting targets: calibration sets with known dimension, the
//! complement of the basin in a window, and a cloud of hair points
//! restricted to the logarithmic tube.

use serde::{Deserialize, Serialize};
use zorich_core::dimension::{box_count_points, in_omega, BoxCount, Probe, ProbeGrid};
use zorich_core::experiments::{orbit_verdict, Verdict};
use zorich_core::hairs::Hair;
use zorich_core::sampling::Aabb;
use zorich_core::symbolic::{Itinerary, Tail};
use zorich_core::{CellIndex, MapConfig, Vec3};

use crate::error::{RunError, RunResult};
use crate::parallel::box_count_par;

/// Scales `2^-lo, ..., 2^-hi`.
pub fn dyadic_scales(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|j| 0.5f64.powi(j as i32)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    Segment,
    Plane,
    Cube,
}

impl Calibration {
    pub const ALL: [Calibration; 3] = [Calibration::Segment, Calibration::Plane, Calibration::Cube];

    pub fn dimension(self) -> f64 {
        match self {
            Calibration::Segment => 1.0,
            Calibration::Plane => 2.0,
            Calibration::Cube => 3.0,
        }
    }
}

/// Count of a calibration set in the unit cube. The segment and the plane
/// are thickened to `[0.2, 0.8] eps_min` across, so they stay inside one
/// cell layer at every scale while the probe spacing `eps_min / 2` always
/// hits them.
pub fn calibration_count(set: Calibration, scales: &[f64]) -> RunResult<BoxCount> {
    let eps_min = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let (c, w) = (0.5 * eps_min, 0.3 * eps_min);
    let near = |x: f64| (x - c).abs() < w;
    let window = Aabb::new(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.0));
    let probes = ProbeGrid { min_per_axis: 1, max_spacing: Some(0.5 * eps_min) };
    let inside = move |p: Vec3| match set {
        Calibration::Segment => near(p.x1) && near(p.x2),
        Calibration::Plane => near(p.x3),
        Calibration::Cube => true,
    };
    box_count_par(&|p: Vec3| if inside(p) { Probe::In } else { Probe::Out }, &window, scales, probes)
}

/// Window above the fixed beam used for the Julia and tube counts.
pub fn julia_window() -> Aabb {
    Aabb::new(Vec3::new(-0.5, -0.5, 3.0), Vec3::new(0.5, 0.5, 4.0))
}

/// Cells meeting the complement of the basin: a probe counts when its
/// orbit passes the exponent guard, is out when it enters `x3 <= M`, and
/// is flagged when the budget runs out.
pub fn julia_count(window: &Aabb, scales: &[f64], budget: usize, cfg: &MapConfig) -> RunResult<BoxCount> {
    let probes = ProbeGrid { min_per_axis: 2, max_spacing: None };
    let classify = |p: Vec3| match orbit_verdict(p, budget, cfg) {
        Verdict::Basin { .. } => Probe::Out,
        Verdict::JuliaEvidence { .. } => Probe::In,
        Verdict::Undecided => Probe::Unknown,
    };
    box_count_par(&classify, window, scales, probes)
}

/// Itineraries `(0,0) s1 (0,0) (0,0) ...` for even `s1` with `|s1|_inf <= reach`.
pub fn tube_itineraries(reach: i64) -> Vec<Itinerary> {
    let mut out = Vec::new();
    for r1 in -reach..=reach {
        for r2 in -reach..=reach {
            let s1 = CellIndex::new(r1, r2);
            if s1.is_even() {
                let tail = Tail::Constant { entry: CellIndex::ORIGIN };
                out.push(Itinerary::new(vec![CellIndex::ORIGIN, s1], tail).expect("even entries"));
            }
        }
    }
    out
}

/// Hair points of [`tube_itineraries`] for `t` in `t_lo..=t_hi` that lie
/// in the window and in the tube `Omega`.
pub fn tube_cloud(window: &Aabb, reach: i64, t_lo: f64, t_hi: f64, n: usize, cfg: &MapConfig) -> RunResult<Vec<Vec3>> {
    let mut pts = Vec::new();
    for s in tube_itineraries(reach) {
        let hair = Hair::new(s, cfg).map_err(RunError::experiment)?;
        for t in zorich_core::hairs::param_grid(t_lo, t_hi, n) {
            let p = hair.point(t, 1e-9).map_err(RunError::experiment)?.point;
            if window.contains(p) && in_omega(p, cfg) {
                pts.push(p);
            }
        }
    }
    Ok(pts)
}

pub fn tube_count(window: &Aabb, scales: &[f64], cfg: &MapConfig) -> RunResult<(BoxCount, usize)> {
    let pts = tube_cloud(window, 2, 2.9, 4.1, 6000, cfg)?;
    let count = box_count_points(&pts, window, scales).map_err(RunError::experiment)?;
    Ok((count, pts.len()))
}
