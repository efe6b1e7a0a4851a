//! Slice renders of the basin and its complement.

use serde::Serialize;
use zorich_core::experiments::{orbit_verdict, Verdict};
use zorich_core::MapConfig;

use crate::args::Plane;
use crate::io::GrayImage;
use crate::parallel::map_grid;
use crate::planar::planar_verdict;

/// Rectangle of a plane: `u` along the first free axis, `v` along the
/// second, image rows running from `v_hi` down to `v_lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceGeometry {
    pub plane: Plane,
    pub u: (f64, f64),
    pub v: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl SliceGeometry {
    /// Free coordinates of the centre of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> (f64, f64) {
        let du = (self.u.1 - self.u.0) / self.width as f64;
        let dv = (self.v.1 - self.v.0) / self.height as f64;
        (self.u.0 + (col as f64 + 0.5) * du, self.v.1 - (row as f64 + 0.5) * dv)
    }
}

/// Gray level: basin points shaded by exit time from white, Julia
/// evidence black, undecided mid-gray.
pub fn shade(v: Verdict) -> u8 {
    match v {
        Verdict::Basin { exit } => 255 - (exit.min(15) as u8) * 6,
        Verdict::JuliaEvidence { .. } => 0,
        Verdict::Undecided => 128,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceRender {
    pub geometry: SliceGeometry,
    pub verdicts: Vec<Verdict>,
}

impl SliceRender {
    pub fn image(&self) -> GrayImage {
        GrayImage::new(self.geometry.width, self.geometry.height, self.verdicts.iter().map(|&v| shade(v)).collect())
    }

    pub fn counts(&self) -> VerdictCounts {
        let mut c = VerdictCounts::default();
        for v in &self.verdicts {
            match v {
                Verdict::Basin { .. } => c.basin += 1,
                Verdict::JuliaEvidence { .. } => c.julia_evidence += 1,
                Verdict::Undecided => c.undecided += 1,
            }
        }
        c
    }

    /// Share of pixels whose verdicts have the same kind.
    pub fn agreement(&self, other: &SliceRender) -> f64 {
        let same = self
            .verdicts
            .iter()
            .zip(&other.verdicts)
            .filter(|(a, b)| core::mem::discriminant(*a) == core::mem::discriminant(*b))
            .count();
        same as f64 / self.verdicts.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VerdictCounts {
    pub basin: usize,
    pub julia_evidence: usize,
    pub undecided: usize,
}

pub fn render_slice(geometry: SliceGeometry, budget: usize, cfg: &MapConfig) -> SliceRender {
    let verdicts = map_grid(geometry.width, geometry.height, |row, col| {
        let (u, v) = geometry.pixel(row, col);
        orbit_verdict(geometry.plane.point(u, v), budget, cfg)
    });
    SliceRender { geometry, verdicts }
}

/// The same render from the planar oracle; `None` unless the plane is
/// `x2 = 0`.
pub fn render_planar(geometry: SliceGeometry, budget: usize, cfg: &MapConfig) -> Option<SliceRender> {
    if geometry.plane.axis != 1 || geometry.plane.value != 0.0 {
        return None;
    }
    let verdicts = map_grid(geometry.width, geometry.height, |row, col| planar_verdict(geometry.pixel(row, col), budget, cfg));
    Some(SliceRender { geometry, verdicts })
}
