//! The attracting fixed point and its basin, orbit classification,
//! accessibility paths to hair points, and the annulus-modified family
//! whose circle `C(s, w)` is invariant.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config, domain, Error, Result};
use crate::geometry::{arc_chart, sample_lipschitz_of, LipschitzStats, SquareChart};
use crate::hairs::endpoint_orbit;
use crate::linalg::Vec3;
use crate::map::{f_raw, jacobian_fd, lambda_branch, zorich_with, CellIndex, MapConfig, EXP_GUARD};
use crate::math::{atan2, cos, hypot, ln, round, sin, sqrt, PI};
use crate::sampling::substream;
use crate::symbolic::Itinerary;

/// Fixed point of `f` with the iteration that found it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedPoint {
    pub point: Vec3,
    pub residual: f64,
    pub iterations: usize,
    /// Largest ratio of consecutive steps above the rounding floor.
    pub max_step_ratio: f64,
}

/// `xi` by iteration from `(0, 0, m)`.
pub fn fixed_point_xi(cfg: &MapConfig, tol: f64) -> Result<FixedPoint> {
    fixed_point_from(Vec3::new(0.0, 0.0, cfg.low_level), cfg, tol)
}

/// Iterates `f` from `x0` (with `x0_3 <= M`) until the step is below `tol`.
pub fn fixed_point_from(x0: Vec3, cfg: &MapConfig, tol: f64) -> Result<FixedPoint> {
    if x0.x3 > cfg.high_level {
        return Err(domain("start point must lie in H_{<=M}"));
    }
    let mut x = x0;
    let mut prev_step = f64::NAN;
    let mut max_ratio: f64 = 0.0;
    for it in 1..=10_000 {
        let y = f_raw(x, cfg.shift);
        let step = y.dist(x);
        if prev_step > 1e-10 && step > 1e-10 {
            let ratio = step / prev_step;
            max_ratio = max_ratio.max(ratio);
            if ratio > cfg.alpha + 1e-6 {
                return Err(config("iteration is not contracting by alpha"));
            }
        }
        x = y;
        prev_step = step;
        if step < tol {
            let residual = f_raw(x, cfg.shift).dist(x);
            return Ok(FixedPoint { point: x, residual, iterations: it, max_step_ratio: max_ratio });
        }
    }
    Err(config("fixed-point iteration did not settle"))
}

/// Outcome of following an orbit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Verdict {
    /// First iterate with `x3 <= M`; definitive.
    Basin { exit: usize },
    /// Iterate beyond the exponent guard.
    JuliaEvidence { index: usize },
    /// Budget spent.
    Undecided,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrbitVerdict {
    pub kind: Verdict,
    pub orbit: Vec<Vec3>,
}

/// Verdict for the orbit of `x` without storing it.
#[inline]
pub fn orbit_verdict(x: Vec3, budget: usize, cfg: &MapConfig) -> Verdict {
    let mut p = x;
    for k in 0..=budget {
        if p.x3 <= cfg.high_level {
            return Verdict::Basin { exit: k };
        }
        if p.x3 > EXP_GUARD || !p.is_finite() {
            return Verdict::JuliaEvidence { index: k };
        }
        if k < budget {
            p = f_raw(p, cfg.shift);
        }
    }
    Verdict::Undecided
}

/// Verdict with the orbit prefix.
pub fn classify_orbit(x: Vec3, budget: usize, cfg: &MapConfig) -> OrbitVerdict {
    let mut orbit = Vec::new();
    let mut p = x;
    for k in 0..=budget {
        orbit.push(p);
        if p.x3 <= cfg.high_level {
            return OrbitVerdict { kind: Verdict::Basin { exit: k }, orbit };
        }
        if p.x3 > EXP_GUARD || !p.is_finite() {
            return OrbitVerdict { kind: Verdict::JuliaEvidence { index: k }, orbit };
        }
        if k < budget {
            p = f_raw(p, cfg.shift);
        }
    }
    OrbitVerdict { kind: Verdict::Undecided, orbit }
}

/// Constants of the accessibility construction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccessConstants {
    /// Radius factor of the avoided ball `B(0, eta |x_k|)`.
    pub eta: f64,
    /// `length(gamma_k) <= mu |x_k|`.
    pub mu: f64,
}

impl AccessConstants {
    pub fn new(cfg: &MapConfig) -> Self {
        let (m, a) = (cfg.high_level, cfg.shift);
        let eta = 0.5 * (m / (m + 6.0 + 2.0 * a)).min(m / (m + 4.0));
        AccessConstants { eta, mu: 13.0 + (66.0 + 8.0 * a) / m }
    }
}

/// Waypoints of level `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Anchors {
    pub y: Vec3,
    pub z: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

/// The pulled-back curve `Gamma_k` as a polyline.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathSegment {
    pub k: usize,
    pub points: Vec<Vec3>,
    pub length: f64,
    /// `(c4 mu / eta) alpha^{k-1}`.
    pub length_bound: f64,
    /// Least `|p| / (eta |x_k|)` over the unpulled curve `gamma_k`.
    pub ball_clearance: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccessPath {
    pub target: Vec3,
    pub orbit: Vec<Vec3>,
    pub anchors: Vec<Anchors>,
    pub segments: Vec<PathSegment>,
    pub constants: AccessConstants,
    pub diagnostics: Vec<String>,
}

impl AccessPath {
    /// Geometric decay ratio of the segment lengths: `exp` of the
    /// least-squares slope of `ln length_k` against `k`.
    pub fn decay_rate(&self) -> Option<f64> {
        let (ks, ys): (Vec<f64>, Vec<f64>) =
            self.segments.iter().filter(|s| s.length > 0.0).map(|s| (s.k as f64, ln(s.length))).unzip();
        if ks.len() < 2 {
            return None;
        }
        Some(crate::math::exp(crate::dimension::fit_line(&ks, &ys).0))
    }

    pub fn dist_to_target(&self, k: usize) -> Option<f64> {
        let s = self.segments.iter().find(|s| s.k == k)?;
        s.points.iter().map(|p| p.dist(self.target)).reduce(f64::min)
    }
}

/// Point of `[w, x]` closest to `w` with `f(.)_3 = M`.
fn boundary_crossing(w: Vec3, x: Vec3, cfg: &MapConfig) -> Option<Vec3> {
    let g = |lam: f64| f_raw(w.lerp(x, lam), cfg.shift).x3 - cfg.high_level;
    let n = 4000;
    let mut lo = 0.0;
    if g(lo) >= 0.0 {
        return None;
    }
    for i in 1..=n {
        let hi = i as f64 / n as f64;
        if g(hi) >= 0.0 {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if g(mid) >= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
                if b - a < 1e-16 {
                    break;
                }
            }
            return Some(w.lerp(x, b));
        }
        lo = hi;
    }
    None
}

fn corner(c: CellIndex, height: f64) -> Vec3 {
    Vec3::new(2.0 * c.r1 as f64 + 1.0, 2.0 * c.r2 as f64 + 1.0, height)
}

fn sample_polyline(nodes: &[Vec3], per_piece: usize) -> Vec<Vec3> {
    let mut out = Vec::new();
    for pair in nodes.windows(2) {
        for i in 0..per_piece {
            out.push(pair[0].lerp(pair[1], i as f64 / per_piece as f64));
        }
    }
    if let Some(&last) = nodes.last() {
        out.push(last);
    }
    out
}

fn polyline_length(p: &[Vec3]) -> f64 {
    p.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Curve from the complement of `J` to the endpoint of the hair with
/// bounded itinerary `s`, built level by level up to depth `depth`.
pub fn access_path(s: &Itinerary, depth: usize, cfg: &MapConfig) -> Result<AccessPath> {
    if !s.is_bounded() {
        return Err(domain("access paths are built for bounded itineraries"));
    }
    let orbit: Vec<Vec3> = endpoint_orbit(s, depth, 1e-13, cfg)?.into_iter().map(|e| e.point).collect();
    if orbit.iter().any(|p| !(p.x3 > cfg.high_level)) {
        return Err(domain("orbit must stay above M"));
    }
    let consts = AccessConstants::new(cfg);
    let cells: Vec<CellIndex> = (0..=depth)
        .map(|k| s.cell_at(k).ok_or(Error::DepthReduction { level: k }))
        .collect::<Result<_>>()?;
    let mut anchors = Vec::with_capacity(depth + 1);
    let mut segments = Vec::with_capacity(depth);
    let mut diagnostics = Vec::new();

    let w0 = corner(cells[0], orbit[0].x3);
    let y0 = boundary_crossing(w0, orbit[0], cfg).ok_or_else(|| domain("no boundary crossing at level 0"))?;
    anchors.push(Anchors { y: y0, z: y0, u: w0, v: w0, w: w0 });

    for k in 1..=depth {
        let xk = orbit[k];
        let z = f_raw(anchors[k - 1].y, cfg.shift);
        let mut r1 = round(z.x1 / 2.0) as i64;
        let r2 = round(z.x2 / 2.0) as i64;
        if (r1 + r2) % 2 != 0 {
            r1 += if z.x1 > 2.0 * r1 as f64 { 1 } else { -1 };
        }
        let r = CellIndex::new(r1, r2);
        let u = corner(r, cfg.high_level);
        let v = corner(r, xk.x3);
        let w = corner(cells[k], xk.x3);
        let bend = Vec3::new(v.x1, w.x2, xk.x3);
        let y = match boundary_crossing(w, xk, cfg) {
            Some(y) => y,
            None => {
                diagnostics.push(alloc::format!("level {k}: corridor blocked, level skipped"));
                break;
            }
        };
        anchors.push(Anchors { y, z, u, v, w });

        let gamma = sample_polyline(&[z, u, v, bend, w, y], 64);
        let clearance = gamma.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min) / (consts.eta * xk.norm());
        let pulled: Vec<Vec3> = gamma
            .iter()
            .map(|&p| {
                let mut q = p;
                for j in (0..k).rev() {
                    q = lambda_branch(q, cells[j].branch(), cfg.shift);
                }
                q
            })
            .collect();
        let length = polyline_length(&pulled);
        let length_bound = cfg.inv_upper * consts.mu / consts.eta * crate::math::powf(cfg.alpha, k as f64 - 1.0);
        segments.push(PathSegment { k, points: pulled, length, length_bound, ball_clearance: clearance });
    }
    Ok(AccessPath { target: orbit[0], orbit, anchors, segments, constants: consts, diagnostics })
}

/// Circle map of the annulus family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CircleMap {
    /// `Phi(phi) = phi`.
    Identity,
    /// `Phi(phi) = phi + phi^3 sin(pi/phi)` for `|phi| <= 1/5`.
    Oscillating,
}

const OSC_EDGE: f64 = 0.2;
const OSC_FADE: f64 = 0.2;

impl CircleMap {
    /// Deviation `Phi(phi) - phi` on `(-pi, pi]`. Beyond `1/5` the
    /// oscillating map is continued by
    /// `(pi/5) x (1 - x/0.2)^2`, `x = |phi| - 1/5`, which matches value and
    /// slope at `1/5` and vanishes with its slope at `0.4`.
    fn bump(&self, phi: f64) -> (f64, f64) {
        match self {
            CircleMap::Identity => (0.0, 0.0),
            CircleMap::Oscillating => {
                let p = phi.abs();
                if p == 0.0 {
                    (0.0, 0.0)
                } else if p <= OSC_EDGE {
                    let (sn, cs) = (sin(PI / phi), cos(PI / phi));
                    (phi * phi * phi * sn, 3.0 * phi * phi * sn - PI * phi * cs)
                } else if p < OSC_EDGE + OSC_FADE {
                    let x = p - OSC_EDGE;
                    let g = 1.0 - x / OSC_FADE;
                    let val = PI / 5.0 * x * g * g;
                    let der = PI / 5.0 * g * (g - 2.0 * x / OSC_FADE);
                    // the deviation is even in phi
                    (val, if phi > 0.0 { der } else { -der })
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let turns = round(phi / (2.0 * PI));
        let base = phi - 2.0 * PI * turns;
        phi + self.bump(base).0
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        let turns = round(phi / (2.0 * PI));
        1.0 + self.bump(phi - 2.0 * PI * turns).1
    }
}

/// Inputs of [`build_annulus_family`]. The radial profile is
/// `R(r) = t + slope (r - s) + cubic (r - s)^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnnulusParams {
    pub s: f64,
    pub delta: f64,
    pub t: f64,
    pub slope: f64,
    pub cubic: f64,
    pub circle_map: CircleMap,
}

impl Default for AnnulusParams {
    fn default() -> Self {
        AnnulusParams { s: 0.2, delta: 0.05, t: 0.9, slope: 0.4, cubic: 40.0, circle_map: CircleMap::Oscillating }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnnulusFamilyConfig {
    pub params: AnnulusParams,
    /// `log(s/t)`.
    pub w: f64,
    /// `s sqrt(1 - t^2)/t - w`.
    pub a: f64,
    /// Width of the cosine ramp to the base chart on each side of the annulus.
    pub blend: f64,
    /// `(s/t) R'(s) sqrt((2 - t^2)/(1 - t^2))`.
    pub radial_value: f64,
    /// `s/t`.
    pub vertical_value: f64,
    /// Whether `a >= e^M - m` holds for the base constants; it does not
    /// for the family, so hair and dimension runs refuse it.
    pub theorem_hypotheses: bool,
}

/// Chart equal to `(R(r) cos Phi, R(r) sin Phi, sqrt(1 - R^2))` on the
/// annulus and blended to the base chart outside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusChart {
    pub family: AnnulusFamilyConfig,
}

impl AnnulusChart {
    fn profile(&self, r: f64) -> (f64, f64) {
        let p = &self.family.params;
        let d = r - p.s;
        (p.t + p.slope * d + p.cubic * d * d * d, p.slope + 3.0 * p.cubic * d * d)
    }

    fn annulus_form(&self, p1: f64, p2: f64) -> Vec3 {
        let r = hypot(p1, p2);
        let phi = self.family.params.circle_map.eval(atan2(p2, p1));
        let rr = self.profile(r).0;
        Vec3::new(rr * cos(phi), rr * sin(phi), sqrt(1.0 - rr * rr))
    }

    /// Weight of the annulus form: 1 on the annulus, cosine ramp to 0
    /// over `blend` on either side.
    fn weight(&self, r: f64) -> f64 {
        let p = &self.family.params;
        let out = (p.s - p.delta - r).max(r - p.s - p.delta);
        if out <= 0.0 {
            1.0
        } else if out >= self.family.blend {
            0.0
        } else {
            0.5 * (1.0 + cos(PI * out / self.family.blend))
        }
    }
}

impl SquareChart for AnnulusChart {
    fn chart(&self, p1: f64, p2: f64) -> Vec3 {
        let beta = self.weight(hypot(p1, p2));
        if beta == 0.0 {
            return arc_chart(p1, p2);
        }
        let mixed = if beta == 1.0 {
            self.annulus_form(p1, p2)
        } else {
            arc_chart(p1, p2).scale(1.0 - beta) + self.annulus_form(p1, p2).scale(beta)
        };
        mixed.scale(1.0 / mixed.norm())
    }
}

/// Validates the parameters and builds the family and its chart.
pub fn build_annulus_family(params: AnnulusParams, base: &MapConfig) -> Result<(AnnulusFamilyConfig, AnnulusChart)> {
    let AnnulusParams { s, delta, t, slope, cubic, .. } = params;
    if !(0.0 < delta && delta < s && s < 0.25) {
        return Err(config("need 0 < delta < s < 1/4"));
    }
    if !(t > 4.0 * s && t < 1.0) {
        return Err(config("need 4s < t = R(s) < 1"));
    }
    let slope_cap = t / (4.0 * s) * sqrt((1.0 - t * t) / (2.0 - t * t));
    if !(slope > 0.0 && slope < slope_cap) {
        return Err(config("need 0 < R'(s) < (t/4s) sqrt((1-t^2)/(2-t^2))"));
    }
    let blend = 0.5 * delta;
    let w = ln(s / t);
    let a = s * sqrt(1.0 - t * t) / t - w;
    let family = AnnulusFamilyConfig {
        params,
        w,
        a,
        blend,
        radial_value: s / t * slope * sqrt((2.0 - t * t) / (1.0 - t * t)),
        vertical_value: s / t,
        theorem_hypotheses: a >= base.min_admissible_shift(),
    };
    let chart = AnnulusChart { family };
    // R increasing with values in (0,1) across the blended range
    let n = 400;
    for i in 0..=n {
        let r = s - delta - blend + 2.0 * (delta + blend) * i as f64 / n as f64;
        let (v, d) = chart.profile(r);
        if !(v > 0.0 && v < 1.0) {
            return Err(config("radial profile leaves (0,1)"));
        }
        if !(d > 0.0 || cubic < 0.0 && d >= 0.0) {
            return Err(config("radial profile must be increasing"));
        }
    }
    for i in 0..=4000 {
        let phi = -PI + 2.0 * PI * i as f64 / 4000.0;
        if !(params.circle_map.derivative(phi) > 0.0) {
            return Err(config("circle map must have positive derivative"));
        }
    }
    Ok((family, chart))
}

impl AnnulusFamilyConfig {
    /// `f = F - (0,0,a)` with the modified chart.
    pub fn map(&self, x: Vec3) -> Vec3 {
        let mut y = zorich_with(&AnnulusChart { family: *self }, x);
        y.x3 -= self.a;
        y
    }

    pub fn circle_point(&self, phi: f64) -> Vec3 {
        let s = self.params.s;
        Vec3::new(s * cos(phi), s * sin(phi), self.w)
    }

    pub fn dist_to_circle(&self, x: Vec3) -> f64 {
        hypot(hypot(x.x1, x.x2) - self.params.s, x.x3 - self.w)
    }

    pub fn angle(&self, x: Vec3) -> f64 {
        atan2(x.x2, x.x1)
    }

    /// Sampled bilipschitz constants of the modified chart.
    pub fn lipschitz(&self, resolution: usize) -> Result<LipschitzStats> {
        sample_lipschitz_of(&AnnulusChart { family: *self }, resolution)
    }

    /// `|df/dr|` on the circle by central differences.
    pub fn radial_derivative_fd(&self, phi: f64) -> f64 {
        let h = 1e-6;
        let s = self.params.s;
        let at = |r: f64| self.map(Vec3::new(r * cos(phi), r * sin(phi), self.w));
        (at(s + h) - at(s - h)).scale(0.5 / h).norm()
    }

    /// `|df/dx3|` on the circle by central differences.
    pub fn vertical_derivative_fd(&self, phi: f64) -> f64 {
        let p = self.circle_point(phi);
        jacobian_fd(|x| self.map(x), p).column(2).norm()
    }

    /// Exact `|df/dr|` on the circle: `(s/t) R'(s) / sqrt(1 - t^2)`.
    pub fn radial_derivative_exact(&self) -> f64 {
        let t = self.params.t;
        self.vertical_value * self.params.slope / sqrt(1.0 - t * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FixedPointKind {
    Attracting,
    Saddle,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CircleFixedPoint {
    pub n: usize,
    pub point: Vec3,
    /// `|f(u_n) - u_n|`.
    pub residual: f64,
    /// `Phi'(phi_n)`.
    pub multiplier: f64,
    /// Tangential stretch of `f` at `u_n` by finite differences.
    pub multiplier_fd: f64,
    pub kind: FixedPointKind,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CircleDynamics {
    /// Largest `dist(f(p), C)` over sampled circle points.
    pub invariance_error: f64,
    pub fixed_points: Vec<CircleFixedPoint>,
}

/// Fixed points `u_n`, `phi_n = 1/n`, for `n` in `n_lo..=n_hi`.
pub fn circle_dynamics(family: &AnnulusFamilyConfig, n_lo: usize, n_hi: usize, samples: usize) -> Result<CircleDynamics> {
    if n_lo < 5 || n_hi < n_lo {
        return Err(domain("need 5 <= n_lo <= n_hi"));
    }
    let mut invariance_error: f64 = 0.0;
    for i in 0..samples {
        let phi = -PI + 2.0 * PI * (i as f64 + 0.5) / samples as f64;
        invariance_error = invariance_error.max(family.dist_to_circle(family.map(family.circle_point(phi))));
    }
    let transversal = family.radial_derivative_exact().max(family.vertical_value);
    let mut fixed_points = Vec::new();
    for n in n_lo..=n_hi {
        let phi = 1.0 / n as f64;
        let p = family.circle_point(phi);
        let residual = family.map(p).dist(p);
        let multiplier = family.params.circle_map.derivative(phi);
        let h = 1e-7;
        let ang = |q: f64| family.angle(family.map(family.circle_point(q)));
        let multiplier_fd = (ang(phi + h) - ang(phi - h)) / (2.0 * h);
        let kind = if (multiplier - 1.0).abs() < 1e-12 {
            FixedPointKind::Neutral
        } else if multiplier.abs() < 1.0 && transversal < 1.0 {
            FixedPointKind::Attracting
        } else {
            FixedPointKind::Saddle
        };
        fixed_points.push(CircleFixedPoint { n, point: p, residual, multiplier, multiplier_fd, kind });
    }
    Ok(CircleDynamics { invariance_error, fixed_points })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContractionReport {
    pub tube: f64,
    pub samples: usize,
    /// Largest `dist(f(x), C) / dist(x, C)`.
    pub max_ratio: f64,
    /// Largest distance to the circle after 200 iterations.
    pub final_dist: f64,
}

/// Distance ratios to `C(s, w)` over `samples` points of the tube of
/// radius `tube`, and 200-step convergence of each point.
pub fn local_attraction_check(family: &AnnulusFamilyConfig, tube: f64, samples: usize, seed: u64) -> Result<ContractionReport> {
    let mut rng = substream(seed, 0);
    let mut max_ratio: f64 = 0.0;
    let mut final_dist: f64 = 0.0;
    for _ in 0..samples {
        let phi = 2.0 * PI * rng.gen::<f64>();
        let rad = tube * sqrt(rng.gen::<f64>());
        let ang = 2.0 * PI * rng.gen::<f64>();
        let (dr, dz) = (rad * cos(ang), rad * sin(ang));
        let r = family.params.s + dr;
        let x = Vec3::new(r * cos(phi), r * sin(phi), family.w + dz);
        let d0 = family.dist_to_circle(x);
        if d0 == 0.0 {
            continue;
        }
        let mut y = family.map(x);
        max_ratio = max_ratio.max(family.dist_to_circle(y) / d0);
        for _ in 1..200 {
            y = family.map(y);
        }
        final_dist = final_dist.max(family.dist_to_circle(y));
    }
    if max_ratio > 0.9 {
        return Err(config("tube is not contracted; family misconfigured"));
    }
    Ok(ContractionReport { tube, samples, max_ratio, final_dist })
}

/// Largest tube radius in `max, max/2, ...` whose sampled distance ratio
/// stays at most `limit`.
pub fn largest_valid_tube(family: &AnnulusFamilyConfig, max: f64, limit: f64, samples: usize, seed: u64) -> Option<f64> {
    let mut eps = max;
    for _ in 0..20 {
        if let Ok(r) = local_attraction_check(family, eps, samples, seed) {
            if r.max_ratio <= limit {
                return Some(eps);
            }
        }
        eps *= 0.5;
    }
    None
}

/// Orbit of `x` under the family map.
pub fn family_orbit(family: &AnnulusFamilyConfig, x: Vec3, steps: usize) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = x;
    out.push(y);
    for _ in 0..steps {
        y = family.map(y);
        out.push(y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::derive_constants;

    fn cfg() -> MapConfig {
        derive_constants(0.5, 64).unwrap()
    }

    #[test]
    fn xi_is_a_fixed_point() {
        let c = cfg();
        let xi = fixed_point_xi(&c, 1e-15).unwrap();
        assert!(xi.residual < 1e-12);
        assert!(xi.point.x3 <= c.low_level);
        // on the axis f reduces to t -> e^t - a
        assert!((crate::math::exp(xi.point.x3) - c.shift - xi.point.x3).abs() < 1e-12);
    }

    #[test]
    fn verdicts() {
        let c = cfg();
        let xi = fixed_point_xi(&c, 1e-15).unwrap().point;
        assert_eq!(orbit_verdict(xi, 10, &c), Verdict::Basin { exit: 0 });
        assert!(matches!(orbit_verdict(Vec3::new(0.0, 0.0, 30.0), 10, &c), Verdict::JuliaEvidence { .. }));
        // the beam over the odd cell (1,0)
        match orbit_verdict(Vec3::new(2.3, 0.1, 4.0), 10, &c) {
            Verdict::Basin { exit } => assert!(exit <= 2),
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn annulus_constants() {
        let (fam, _) = build_annulus_family(AnnulusParams::default(), &cfg()).unwrap();
        assert!((fam.w - ln(2.0 / 9.0)).abs() < 1e-15);
        assert!((fam.a - 1.600_941_817_743_844).abs() < 1e-12);
        assert!((fam.radial_value - 0.22246).abs() < 1e-5);
        assert!(!fam.theorem_hypotheses);
    }

    #[test]
    fn annulus_rejects_bad_parameters() {
        let bad = AnnulusParams { t: 0.7, ..AnnulusParams::default() };
        assert!(build_annulus_family(bad, &cfg()).is_err());
        let steep = AnnulusParams { slope: 1.5, ..AnnulusParams::default() };
        assert!(build_annulus_family(steep, &cfg()).is_err());
    }

    #[test]
    fn circle_map_is_c1_at_the_seams() {
        let m = CircleMap::Oscillating;
        for &edge in &[0.2, -0.2, 0.4, -0.4] {
            let (l, r) = (m.derivative(edge - 1e-9), m.derivative(edge + 1e-9));
            assert!((l - r).abs() < 1e-6, "{edge}: {l} {r}");
        }
        assert!((m.eval(2.0 * PI + 0.1) - m.eval(0.1) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn access_path_to_the_fixed_endpoint() {
        let c = cfg();
        let p = access_path(&Itinerary::zero(), 8, &c).unwrap();
        assert!(p.diagnostics.is_empty());
        for seg in &p.segments {
            assert!(p.dist_to_target(seg.k).unwrap() <= 4.0 * crate::math::powf(c.alpha, seg.k as f64));
            assert!(seg.length <= seg.length_bound);
            assert!(seg.ball_clearance >= 1.0);
            assert!(seg.points.iter().step_by(16).all(|q| matches!(orbit_verdict(*q, 60, &c), Verdict::Basin { .. })));
        }
        assert!(p.decay_rate().unwrap() <= c.alpha + 0.05);
    }

    #[test]
    fn circle_fixed_points_alternate() {
        let (fam, _) = build_annulus_family(AnnulusParams::default(), &cfg()).unwrap();
        let cd = circle_dynamics(&fam, 5, 8, 2000).unwrap();
        assert!(cd.invariance_error < 1e-10);
        for fp in &cd.fixed_points {
            assert!(fp.residual < 1e-12);
            assert!((fp.multiplier - fp.multiplier_fd).abs() < 1e-5);
            let want = if fp.n % 2 == 0 { FixedPointKind::Attracting } else { FixedPointKind::Saddle };
            assert_eq!(fp.kind, want);
        }
        assert!((cd.fixed_points[1].multiplier - (1.0 - PI / 6.0)).abs() < 1e-12);
        assert!((cd.fixed_points[0].multiplier - (1.0 + PI / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn transversal_derivatives() {
        let (fam, _) = build_annulus_family(AnnulusParams::default(), &cfg()).unwrap();
        for &phi in &[0.05, 0.3, 2.0, -2.5] {
            assert!((fam.vertical_derivative_fd(phi) - fam.vertical_value).abs() < 1e-8);
            assert!((fam.radial_derivative_fd(phi) - fam.radial_derivative_exact()).abs() < 1e-6);
        }
        // the closed form with the extra factor is an upper bound
        assert!(fam.radial_derivative_exact() < fam.radial_value);
    }

    #[test]
    fn tube_is_contracted() {
        let (fam, _) = build_annulus_family(AnnulusParams::default(), &cfg()).unwrap();
        let r = local_attraction_check(&fam, 0.02, 2000, 3).unwrap();
        assert!(r.max_ratio <= 0.55);
        assert!(r.final_dist < 1e-12);
    }
}
