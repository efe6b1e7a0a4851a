//! Independent complex-arithmetic model of the map on the plane `x2 = 0`.
//!
//! On that plane the map acts as `e^z - a` with `z = x3 + i (pi/2) x1`
//! and the image read back as `x3 + i x1`. Both the orbit classifier and
//! the hair construction here use only `num_complex`, so they serve as an
//! oracle for the three-dimensional code.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use zorich_core::experiments::Verdict;
use zorich_core::map::EXP_GUARD;
use zorich_core::symbolic::Itinerary;
use zorich_core::MapConfig;

/// Planar point `(x1, x3)`.
pub type PlanarPoint = (f64, f64);

pub fn planar_step((x1, x3): PlanarPoint, shift: f64) -> PlanarPoint {
    let w = Complex64::new(x3, FRAC_PI_2 * x1).exp() - shift;
    (w.im, w.re)
}

pub fn planar_verdict(mut p: PlanarPoint, budget: usize, cfg: &MapConfig) -> Verdict {
    for k in 0..=budget {
        if p.1 <= cfg.high_level {
            return Verdict::Basin { exit: k };
        }
        if p.1 > EXP_GUARD || !(p.0.is_finite() && p.1.is_finite()) {
            return Verdict::JuliaEvidence { index: k };
        }
        if k < budget {
            p = planar_step(p, cfg.shift);
        }
    }
    Verdict::Undecided
}

/// Branch of the inverse landing in the strip of the even cell `(r1, 0)`.
pub fn planar_inverse((x1, x3): PlanarPoint, r1: i64, shift: f64) -> PlanarPoint {
    let z = (Complex64::new(x3, x1) + shift).ln() + Complex64::new(0.0, std::f64::consts::PI * r1 as f64);
    (z.im / FRAC_PI_2, z.re)
}

/// Point `g(t)` of the hair with planar itinerary `s` (all `r2 = 0`),
/// composed from the deepest level whose `E^{k+1}(t)` is finite, capped
/// at `max_depth`. Returns `None` for itineraries off the plane.
pub fn planar_hair_point(s: &Itinerary, t: f64, max_depth: usize, cfg: &MapConfig) -> Option<PlanarPoint> {
    let mut orbit = vec![t];
    while orbit.len() <= max_depth + 1 {
        let next = orbit.last().unwrap().exp_m1();
        if !next.is_finite() {
            break;
        }
        orbit.push(next);
    }
    let cells: Vec<i64> = (0..orbit.len())
        .map(|k| s.cell_at(k).filter(|c| c.r2 == 0).map(|c| c.r1))
        .collect::<Option<_>>()?;
    let (m, a) = (cfg.high_level, cfg.shift);
    let top = orbit.len() - 1;
    let mut p = if top > max_depth {
        // start from the axis point at level max_depth + 1
        planar_inverse((0.0, orbit[max_depth + 1] + m), cells[max_depth], a)
    } else {
        // log(E^{top+1}(t) + M + a) without forming E^{top+1}(t)
        let e = orbit[top];
        (2.0 * cells[top] as f64, e + ((m + a - 1.0) * (-e).exp()).ln_1p())
    };
    let start = top.min(max_depth);
    for k in (0..start).rev() {
        p = planar_inverse(p, cells[k], a);
    }
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use zorich_core::map::{derive_constants, eval_f};
    use zorich_core::Vec3;

    #[test]
    fn step_matches_the_map_on_the_plane() {
        let cfg = derive_constants(0.5, 64).unwrap();
        for &(x1, x3) in &[(0.3, 1.0), (1.7, -0.5), (-5.2, 2.0), (9.99, 0.1)] {
            let (y1, y3) = planar_step((x1, x3), cfg.shift);
            let y = eval_f(Vec3::new(x1, 0.0, x3), &cfg).unwrap();
            assert!((y.x1 - y1).abs() < 1e-12 * y.norm().max(1.0));
            assert!(y.x2.abs() < 1e-15);
            assert!((y.x3 - y3).abs() < 1e-12 * y.norm().max(1.0));
        }
    }

    #[test]
    fn inverse_branch_inverts() {
        let cfg = derive_constants(0.5, 64).unwrap();
        let y = (3.0, 7.0);
        for r1 in [-4, -2, 0, 2, 6] {
            let x = planar_inverse(y, r1, cfg.shift);
            assert!((x.0 - 2.0 * r1 as f64).abs() <= 1.0);
            let back = planar_step(x, cfg.shift);
            assert!((back.0 - y.0).abs() < 1e-12 && (back.1 - y.1).abs() < 1e-12);
        }
    }
}
