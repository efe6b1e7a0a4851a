//! The square-to-hemisphere chart `h` that shapes a Zorich map.
//!
//! `h` sends the closed square `Q = [-1,1]^2` onto the closed upper unit
//! hemisphere. A point at max-norm `rho` lands at polar angle `pi*rho/2`
//! in the direction of `p`, so `h(0) = (0,0,1)` and `dQ` goes to the equator.

use crate::error::{domain, Result};
use crate::linalg::Vec3;
use crate::math::{atan2, cos, hypot, sin, FRAC_PI_2};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SquarePoint {
    pub p1: f64,
    pub p2: f64,
}

impl SquarePoint {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        let p = SquarePoint { p1, p2 };
        if !(p1.is_finite() && p2.is_finite()) || p.max_norm() > 1.0 {
            return Err(domain("point outside the square [-1,1]^2"));
        }
        Ok(p)
    }

    pub fn max_norm(&self) -> f64 {
        self.p1.abs().max(self.p2.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HemispherePoint {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
}

impl HemispherePoint {
    pub fn new(u1: f64, u2: f64, u3: f64) -> Result<Self> {
        let n = Vec3::new(u1, u2, u3).norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-10 {
            return Err(domain("point is not on the unit sphere"));
        }
        if u3 < -1e-14 {
            return Err(domain("point lies below the equator"));
        }
        Ok(HemispherePoint { u1, u2, u3 })
    }

    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.u1, self.u2, self.u3)
    }
}

/// A chart of the square onto the upper hemisphere.
///
/// Callers guarantee `max(|p1|,|p2|) <= 1`.
pub trait SquareChart {
    fn chart(&self, p1: f64, p2: f64) -> Vec3;
}

/// The max-norm / arc-length chart.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArcChart;

impl SquareChart for ArcChart {
    #[inline]
    fn chart(&self, p1: f64, p2: f64) -> Vec3 {
        arc_chart(p1, p2)
    }
}

#[inline]
pub(crate) fn arc_chart(p1: f64, p2: f64) -> Vec3 {
    let rho = p1.abs().max(p2.abs());
    if rho == 0.0 {
        return Vec3::E3;
    }
    let r = hypot(p1, p2);
    let angle = FRAC_PI_2 * rho;
    let s = sin(angle) / r;
    Vec3::new(p1 * s, p2 * s, cos(angle))
}

/// Inverse of [`arc_chart`] for a unit vector with `u3 >= 0`.
#[inline]
pub(crate) fn arc_chart_inverse(u: Vec3) -> (f64, f64) {
    let r = hypot(u.x1, u.x2);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    // polar angle via atan2 keeps full precision near the apex
    let rho = (atan2(r, u.x3) / FRAC_PI_2).min(1.0);
    let (d1, d2) = (u.x1 / r, u.x2 / r);
    let k = rho / d1.abs().max(d2.abs());
    (d1 * k, d2 * k)
}

pub fn square_to_hemisphere(p: SquarePoint) -> Result<HemispherePoint> {
    let p = SquarePoint::new(p.p1, p.p2)?;
    let v = arc_chart(p.p1, p.p2);
    Ok(HemispherePoint { u1: v.x1, u2: v.x2, u3: v.x3 })
}

pub fn hemisphere_to_square(u: HemispherePoint) -> Result<SquarePoint> {
    let u = HemispherePoint::new(u.u1, u.u2, u.u3)?;
    let (p1, p2) = arc_chart_inverse(u.to_vec3());
    Ok(SquarePoint { p1, p2 })
}

/// True when `(p1,p2)` is within `radius` (max-norm) of the diagonals
/// `|p1| = |p2|`, where the chart is not differentiable.
pub fn near_nonsmooth(p1: f64, p2: f64, radius: f64) -> bool {
    (p1.abs() - p2.abs()).abs() < radius
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LipschitzStats {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
}

/// Finite-difference stretch ratios of the arc chart over neighbouring
/// nodes of a `resolution x resolution` interval grid on `Q`.
pub fn sample_lipschitz(resolution: usize) -> Result<LipschitzStats> {
    sample_lipschitz_of(&ArcChart, resolution)
}

pub fn sample_lipschitz_of<C: SquareChart + ?Sized>(chart: &C, resolution: usize) -> Result<LipschitzStats> {
    if resolution < 2 {
        return Err(domain("resolution must be at least 2"));
    }
    let n = resolution;
    let node = |i: usize| -1.0 + 2.0 * i as f64 / n as f64;
    let mut lower = f64::INFINITY;
    let mut upper: f64 = 0.0;
    let mut samples = 0usize;
    let mut visit = |a: (f64, f64), b: (f64, f64)| {
        if !share_sector(a, b) {
            return;
        }
        let d = hypot(a.0 - b.0, a.1 - b.1);
        let ratio = chart.chart(a.0, a.1).dist(chart.chart(b.0, b.1)) / d;
        lower = lower.min(ratio);
        upper = upper.max(ratio);
        samples += 1;
    };
    for i in 0..=n {
        for j in 0..=n {
            let p = (node(i), node(j));
            if i < n {
                visit(p, (node(i + 1), node(j)));
            }
            if j < n {
                visit(p, (node(i), node(j + 1)));
            }
        }
    }
    if samples == 0 || lower <= 0.0 {
        return Err(domain("no admissible grid pairs"));
    }
    Ok(LipschitzStats { lower, upper, samples })
}

/// The four closed sectors `p1 >= |p2|`, `-p1 >= |p2|`, `p2 >= |p1|`,
/// `-p2 >= |p1|` on which the chart is smooth.
fn sectors(p: (f64, f64)) -> u8 {
    let (a, b) = p;
    let mut mask = 0;
    if a >= b.abs() {
        mask |= 1;
    }
    if -a >= b.abs() {
        mask |= 2;
    }
    if b >= a.abs() {
        mask |= 4;
    }
    if -b >= a.abs() {
        mask |= 8;
    }
    mask
}

fn share_sector(a: (f64, f64), b: (f64, f64)) -> bool {
    sectors(a) & sectors(b) != 0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(p1: f64, p2: f64) -> Vec3 {
        square_to_hemisphere(SquarePoint::new(p1, p2).unwrap()).unwrap().to_vec3()
    }

    #[test]
    fn apex_and_equator() {
        assert_eq!(h(0.0, 0.0), Vec3::new(0.0, 0.0, 1.0));
        let c = h(1.0, 1.0);
        let s = core::f64::consts::FRAC_1_SQRT_2;
        assert!((c.x1 - s).abs() < 1e-15 && (c.x2 - s).abs() < 1e-15 && c.x3.abs() < 1e-15);
        let m = h(0.5, 0.0);
        assert!((m.x1 - s).abs() < 1e-15 && m.x2 == 0.0 && (m.x3 - s).abs() < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        let p = hemisphere_to_square(HemispherePoint::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!((p.p1, p.p2), (0.0, 0.0));
        let p = hemisphere_to_square(HemispherePoint::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert!((p.p1 - 1.0).abs() < 1e-15 && p.p2 == 0.0);
        let u = square_to_hemisphere(SquarePoint::new(0.3, -0.7).unwrap()).unwrap();
        let p = hemisphere_to_square(u).unwrap();
        assert!((p.p1 - 0.3).abs() < 1e-12 && (p.p2 + 0.7).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(SquarePoint::new(1.0 + 1e-12, 0.0).is_err());
        assert!(SquarePoint::new(f64::NAN, 0.0).is_err());
        assert!(HemispherePoint::new(0.0, 0.6, -0.8).is_err());
        assert!(HemispherePoint::new(0.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn reflections_are_exact() {
        for &(a, b) in &[(0.3, 0.1), (-0.9, 0.45), (0.2, -0.99), (0.0, 0.7)] {
            let v = h(a, b);
            assert_eq!(h(-a, b), Vec3::new(-v.x1, v.x2, v.x3));
            assert_eq!(h(a, -b), Vec3::new(v.x1, -v.x2, v.x3));
        }
    }

    #[test]
    fn chord_stretch_near_apex_tends_to_quarter_turn() {
        // chord of an arc of angle pi*d/2 over a step d
        let d = 1e-3;
        let ratio = h(d, 0.0).dist(h(0.0, 0.0)) / d;
        let oracle = 2.0 * libm::sin(core::f64::consts::PI * d / 4.0) / d;
        assert!((ratio - oracle).abs() < 1e-12);
        assert!((ratio - core::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn coarse_lipschitz_grid() {
        let s = sample_lipschitz(2).unwrap();
        // the pair (0,0)-(1,0) spans a quarter arc: chord sqrt(2) over length 1
        assert!(s.upper >= core::f64::consts::SQRT_2 - 1e-12);
        assert!(s.lower > 0.0);
        assert!(sample_lipschitz(1).is_err());
    }

    #[test]
    fn lipschitz_ratio_converges() {
        let a = sample_lipschitz(256).unwrap();
        let b = sample_lipschitz(512).unwrap();
        let ra = a.upper / a.lower;
        let rb = b.upper / b.lower;
        assert!(a.lower > 0.0 && b.lower > 0.0);
        assert!((ra - rb).abs() / rb < 0.1, "{ra} vs {rb}");
    }
}
