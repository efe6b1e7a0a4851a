//! Dimension experiments: the nested box collections giving the lower
//! bound `dim J = 3`, box counting, and the tube `Omega` with the covering
//! statistics behind `dim J' = 1`.
//!
//! A box `R(r, l)` sits over the even cell `r` at height `l`. Because `h`
//! sends the max-norm square of radius `q` onto the polar cap of angle
//! `pi q / 2`, the image `f(R(r, l)) + (0,0,a)` is exactly the cone shell
//! `{e^l <= |y| <= e^{l+3/4}, y3 >= cos(pi q/2) |y|}`; containment of
//! boxes in images is decided from that description.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::geometry::arc_chart_inverse;
use crate::hairs::{Hair, HairConstants};
use crate::linalg::{Mat3, Vec3};
use crate::map::{f_raw, is_odd, jacobian_fd, lambda_branch, zorich, Branch, CellIndex, MapConfig, EXP_GUARD};
use crate::math::{cos, exp, floor, ln, log_add_exp, round, sin, sqrt, FRAC_PI_2, PI};
use crate::sampling::{substream, Aabb};
use crate::symbolic::{e_iter, endpoint_param, log_e_iter, Itinerary, DEFAULT_DEPTH};

/// Vertical extent of a box.
pub const BOX_HEIGHT: f64 = 0.75;
/// Default Monte-Carlo sample count per region.
pub const DEFAULT_SAMPLES: usize = 100_000;
/// Levels beyond the base level at which densities are measured.
pub const DENSITY_SPAN: i64 = 4;

/// Smallest `q` (on a grid of `directions` azimuths and 64 polar angles)
/// whose square covers the cap `{u3 >= 1/2}` under `h`, plus a 1% margin.
pub fn q_probe(directions: usize) -> f64 {
    let mut q: f64 = 0.0;
    let polar_max = PI / 3.0;
    for i in 0..directions.max(1) {
        let phi = 2.0 * PI * i as f64 / directions.max(1) as f64;
        for j in 0..=64 {
            let th = polar_max * j as f64 / 64.0;
            let u = Vec3::new(sin(th) * cos(phi), sin(th) * sin(phi), cos(th));
            let (p1, p2) = arc_chart_inverse(u);
            q = q.max(p1.abs().max(p2.abs()));
        }
    }
    q * 1.01
}

/// The box `R(r, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McBox {
    pub r: CellIndex,
    pub level: i64,
}

impl McBox {
    pub fn new(r: CellIndex, level: i64) -> Result<Self> {
        if !r.is_even() {
            return Err(domain("box cell must have even parity"));
        }
        if level < 1 {
            return Err(domain("box level must be at least 1"));
        }
        Ok(McBox { r, level })
    }

    pub fn aabb(&self, q: f64) -> Aabb {
        let (c1, c2, l) = (2.0 * self.r.r1 as f64, 2.0 * self.r.r2 as f64, self.level as f64);
        Aabb::new(Vec3::new(c1 - q, c2 - q, l), Vec3::new(c1 + q, c2 + q, l + BOX_HEIGHT))
    }

    pub fn volume(q: f64) -> f64 {
        4.0 * q * q * BOX_HEIGHT
    }
}

/// Members of `A_k`, recorded by the chain of boxes they were pulled back
/// through: the member is `(L_0 o ... o L_{k-1})(R_k)` with `L_j` the
/// branch onto the cell of `R_j`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxCollection {
    pub level: usize,
    pub chains: Vec<Vec<McBox>>,
    /// Index of the parent chain in the collection one level up.
    pub parents: Vec<Option<usize>>,
}

/// Result of the inner and outer shell checks at one level.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SandwichReport {
    pub level: i64,
    pub inner_samples: usize,
    pub inner_failures: usize,
    pub outer_samples: usize,
    pub outer_failures: usize,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.inner_failures == 0 && self.outer_failures == 0
    }
}

/// Monte-Carlo density estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Density {
    pub level: i64,
    pub value: f64,
    pub se: f64,
    pub samples: usize,
}

impl Density {
    pub fn relative_se(&self) -> f64 {
        self.se / self.value
    }
}

/// Context of the nested-box experiment: the map and the half-width `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McMullen {
    pub cfg: MapConfig,
    pub q: f64,
    cone_cos: f64,
}

impl McMullen {
    pub fn new(cfg: &MapConfig, q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(domain("q must lie in (0, 1)"));
        }
        cfg.validate()?;
        Ok(McMullen { cfg: *cfg, q, cone_cos: cos(FRAC_PI_2 * q) })
    }

    /// `R(r', l') subset f(R(r, level))` for any even `r`.
    pub fn image_contains(&self, b: &McBox, level: f64) -> bool {
        let a = self.cfg.shift;
        let bb = b.aabb(self.q);
        let (lo, hi) = (bb.lo + Vec3::E3 * a, bb.hi + Vec3::E3 * a);
        let outer = exp(level + BOX_HEIGHT);
        let shifted = Aabb::new(lo, hi);
        for c in shifted.corners() {
            let n = c.norm();
            if n > outer || c.x3 < self.cone_cos * n {
                return false;
            }
        }
        let nearest = Vec3::new(0.0f64.clamp(lo.x1, hi.x1), 0.0f64.clamp(lo.x2, hi.x2), 0.0f64.clamp(lo.x3, hi.x3));
        nearest.norm() >= exp(level)
    }

    /// Membership of `b` in `U(level)`: inside the image and at height at
    /// least `e^level / 2`, so that heights along a chain grow like `E_*`.
    pub fn admits(&self, b: &McBox, level: f64) -> bool {
        b.level as f64 >= 0.5 * exp(level) && self.image_contains(b, level)
    }

    /// The box of `U(level)` containing `z`, if any.
    pub fn member_box(&self, z: Vec3, level: f64) -> Option<McBox> {
        let r1 = round(z.x1 / 2.0);
        let r2 = round(z.x2 / 2.0);
        if (z.x1 - 2.0 * r1).abs() > self.q || (z.x2 - 2.0 * r2).abs() > self.q {
            return None;
        }
        if r1.abs() > 1e15 || r2.abs() > 1e15 || z.x3 > 1e15 {
            return None;
        }
        let l = floor(z.x3);
        if l < 1.0 || z.x3 - l > BOX_HEIGHT {
            return None;
        }
        let b = McBox::new(CellIndex::new(r1 as i64, r2 as i64), l as i64).ok()?;
        self.admits(&b, level).then_some(b)
    }

    /// Uniform point of `f(R(0, level))`.
    pub fn sample_image<R: Rng + ?Sized>(&self, level: f64, rng: &mut R) -> Vec3 {
        let k = exp(3.0 * BOX_HEIGHT) - 1.0;
        let rho = exp(level) * crate::math::cbrt(1.0 + rng.gen::<f64>() * k);
        let c = self.cone_cos + (1.0 - self.cone_cos) * rng.gen::<f64>();
        let s = sqrt(1.0 - c * c);
        let phi = 2.0 * PI * rng.gen::<f64>();
        Vec3::new(rho * s * cos(phi), rho * s * sin(phi), rho * c - self.cfg.shift)
    }

    pub fn image_volume(&self, level: f64) -> f64 {
        2.0 * PI / 3.0 * (1.0 - self.cone_cos) * (exp(3.0 * (level + BOX_HEIGHT)) - exp(3.0 * level))
    }

    /// Inner shell `{e^l <= |x| <= 2e^l, x3 >= |x|/2}` against `f(R(0,l))`
    /// through `Lambda`, and `f(R(0,l))` against the outer shell
    /// `{e^l/2 <= |x| <= 3e^l}`. Extreme points of both regions are
    /// checked alongside the random ones.
    pub fn sandwich(&self, level: i64, samples: usize, seed: u64) -> SandwichReport {
        let l = level as f64;
        let a = self.cfg.shift;
        let bx = McBox { r: CellIndex::ORIGIN, level }.aabb(self.q);
        let tol = 1e-12 * exp(l);
        let mut rep = SandwichReport { level, inner_samples: 0, inner_failures: 0, outer_samples: 0, outer_failures: 0 };

        let mut inner_pts = Vec::new();
        for &rho in &[exp(l), 2.0 * exp(l)] {
            for &c in &[0.5, 1.0] {
                let s = sqrt(1.0 - c * c);
                inner_pts.push(Vec3::new(rho * s, 0.0, rho * c));
                inner_pts.push(Vec3::new(0.0, rho * s, rho * c));
            }
        }
        let mut rng = substream(seed, 0);
        for _ in 0..samples {
            let rho = exp(l) * crate::math::cbrt(1.0 + 7.0 * rng.gen::<f64>());
            let c = 0.5 + 0.5 * rng.gen::<f64>();
            let s = sqrt(1.0 - c * c);
            let phi = 2.0 * PI * rng.gen::<f64>();
            inner_pts.push(Vec3::new(rho * s * cos(phi), rho * s * sin(phi), rho * c));
        }
        for y in inner_pts {
            rep.inner_samples += 1;
            let x = lambda_branch(y, Branch::new(0.0, 0.0), a);
            let inside = x.x1.abs() <= self.q
                && x.x2.abs() <= self.q
                && x.x3 >= l - 1e-12
                && x.x3 <= l + BOX_HEIGHT + 1e-12;
            if !inside {
                rep.inner_failures += 1;
            }
        }

        let mut outer_pts: Vec<Vec3> = bx.corners().to_vec();
        let mut rng = substream(seed, 1);
        for _ in 0..samples {
            outer_pts.push(bx.sample(&mut rng));
        }
        for x in outer_pts {
            rep.outer_samples += 1;
            let n = f_raw(x, a).norm();
            if n < 0.5 * exp(l) - tol || n > 3.0 * exp(l) + tol {
                rep.outer_failures += 1;
            }
        }
        rep
    }

    /// Smallest level in `1..=max_level` from which every level up to
    /// `max_level` passes [`McMullen::sandwich`].
    pub fn smallest_sandwich_level(&self, max_level: i64, samples: usize, seed: u64) -> Option<i64> {
        let mut best = None;
        for l in (1..=max_level).rev() {
            if self.sandwich(l, samples, seed ^ l as u64).passed() {
                best = Some(l);
            } else {
                break;
            }
        }
        best
    }

    /// `l0`: one above the smallest passing level.
    pub fn base_level(&self, samples: usize, seed: u64) -> Result<i64> {
        self.smallest_sandwich_level(40, samples, seed)
            .map(|l| l + 1)
            .ok_or_else(|| crate::error::config("image inclusions fail at every probed level"))
    }

    /// Density of `U(level)` in `f(R(0, level))`, together with the
    /// member boxes met by the samples.
    pub fn density_with_boxes(&self, level: i64, samples: usize, seed: u64) -> (Density, BTreeSet<McBox>) {
        let l = level as f64;
        let mut rng = substream(seed, level as u64);
        let mut hits = 0usize;
        let mut boxes = BTreeSet::new();
        for _ in 0..samples {
            let z = self.sample_image(l, &mut rng);
            if let Some(b) = self.member_box(z, l) {
                hits += 1;
                boxes.insert(b);
            }
        }
        let p = hits as f64 / samples as f64;
        let se = sqrt(p * (1.0 - p) / samples as f64);
        (Density { level, value: p, se, samples }, boxes)
    }

    pub fn density(&self, level: i64, samples: usize, seed: u64) -> Density {
        self.density_with_boxes(level, samples, seed).0
    }

    /// Share of `R(0, level)` mapped into `U(level)`; with `weight` the
    /// points are transported to the box `weight` and weighted by the
    /// Jacobian of `L_0` there.
    pub fn pullback_density(&self, level: i64, weight: Option<&McBox>, samples: usize, seed: u64) -> Density {
        let l = level as f64;
        let a = self.cfg.shift;
        let bx = McBox { r: CellIndex::ORIGIN, level }.aabb(self.q);
        let mut rng = substream(seed, 1000 + level as u64);
        let mut logw = Vec::with_capacity(samples);
        let mut ind = Vec::with_capacity(samples);
        for _ in 0..samples {
            let y = bx.sample(&mut rng);
            ind.push(self.member_box(f_raw(y, a), l).is_some());
            logw.push(match weight {
                None => 0.0,
                Some(b) => {
                    let s1 = if b.r.r1 % 2 != 0 { -1.0 } else { 1.0 };
                    let s2 = if b.r.r2 % 2 != 0 { -1.0 } else { 1.0 };
                    let moved = Vec3::new(
                        2.0 * b.r.r1 as f64 + s1 * y.x1,
                        2.0 * b.r.r2 as f64 + s2 * y.x2,
                        b.level as f64 + (y.x3 - l),
                    );
                    let x = lambda_branch(moved, Branch::new(0.0, 0.0), a);
                    -log_jacobian(x)
                }
            });
        }
        weighted_share(&logw, &ind, level)
    }
}

/// `log J_f(x)`.
fn log_jacobian(x: Vec3) -> f64 {
    3.0 * x.x3 + ln(base_jacobian(x.x1, x.x2).det().abs())
}

/// `DF(x1, x2, 0)`.
fn base_jacobian(x1: f64, x2: f64) -> Mat3 {
    jacobian_fd(zorich, Vec3::new(x1, x2, 0.0))
}

fn weighted_share(logw: &[f64], ind: &[bool], level: i64) -> Density {
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|&v| exp(v - top)).collect();
    let total: f64 = w.iter().sum();
    let hit: f64 = w.iter().zip(ind).filter(|(_, &i)| i).map(|(w, _)| w).sum();
    let p = hit / total;
    let var: f64 = w
        .iter()
        .zip(ind)
        .map(|(&w, &i)| {
            let d = if i { 1.0 - p } else { -p };
            w * w * d * d
        })
        .sum();
    Density { level, value: p, se: sqrt(var) / total, samples: ind.len() }
}

/// A magnitude `exp^tier(v)`, for box heights and scales that no longer
/// fit a double.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tower {
    pub tier: u32,
    pub v: f64,
}

impl Tower {
    pub fn finite(v: f64) -> Self {
        Tower { tier: 0, v }
    }

    fn normalized(mut self) -> Self {
        while self.tier > 0 && self.v < EXP_GUARD {
            self.v = exp(self.v);
            self.tier -= 1;
        }
        self
    }

    pub fn ln(self) -> Self {
        if self.tier == 0 {
            Tower::finite(ln(self.v))
        } else {
            Tower { tier: self.tier - 1, v: self.v }.normalized()
        }
    }

    /// `c e^self` for `c > 0`.
    pub fn exp_scaled(self, c: f64) -> Self {
        if self.tier == 0 {
            Tower { tier: 1, v: self.v + ln(c) }.normalized()
        } else {
            Tower { tier: self.tier + 1, v: self.v }
        }
    }

    /// `self + d` for a moderate `d`; negligible once `tier > 0`.
    pub fn add(self, d: f64) -> Self {
        if self.tier == 0 {
            Tower::finite(self.v + d)
        } else {
            self
        }
    }

    pub fn value(self) -> Option<f64> {
        (self.tier == 0).then_some(self.v)
    }

    fn lifted(self, tier: u32) -> f64 {
        let mut t = self;
        while t.tier < tier {
            t = Tower { tier: t.tier + 1, v: ln(t.v) };
        }
        t.v
    }

    pub fn cmp_value(&self, o: &Tower) -> core::cmp::Ordering {
        let tier = self.tier.max(o.tier);
        self.lifted(tier).total_cmp(&o.lifted(tier))
    }

    /// `log(self)` as a double; infinite when even that overflows.
    pub fn ln_value(self) -> f64 {
        self.ln().value().unwrap_or(f64::INFINITY)
    }
}

/// Sum of non-negative towers: exact at tier 0, dominated by the largest
/// term otherwise.
fn tower_sum(terms: &[Tower]) -> Tower {
    let top = terms.iter().copied().max_by(|a, b| a.cmp_value(b)).unwrap_or(Tower::finite(0.0));
    if top.tier > 0 {
        return top;
    }
    Tower::finite(terms.iter().map(|t| t.v).sum())
}

/// A box of some `A_k` chain, described by the direction and distance of
/// its centre from `-a e3` and by its height.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ChainBox {
    flips: (bool, bool),
    dir: Vec3,
    radius: Tower,
    height: Tower,
}

impl ChainBox {
    fn from_box(b: &McBox, q: f64, a: f64) -> Self {
        let c = b.aabb(q).center() + Vec3::E3 * a;
        let n = c.norm();
        ChainBox {
            flips: (b.r.r1 % 2 != 0, b.r.r2 % 2 != 0),
            dir: c.scale(1.0 / n),
            radius: Tower::finite(n),
            height: Tower::finite(b.level as f64),
        }
    }

    /// Box inside `f(R(., parent_height))` at polar angle `theta`, azimuth
    /// `phi` and distance `factor * e^{parent_height}` from `-a e3`.
    fn inside(parent_height: Tower, theta: f64, phi: f64, factor: f64, a: f64) -> Self {
        let radius = parent_height.exp_scaled(factor);
        let dir = Vec3::new(sin(theta) * cos(phi), sin(theta) * sin(phi), cos(theta));
        match radius.value() {
            Some(rho) => {
                let c = dir.scale(rho) - Vec3::E3 * a;
                let mut r1 = round(c.x1 / 2.0);
                let r2 = round(c.x2 / 2.0);
                if is_odd(r1) != is_odd(r2) {
                    r1 += 1.0;
                }
                let centre = Vec3::new(2.0 * r1, 2.0 * r2, floor(c.x3) + 0.5 * BOX_HEIGHT) + Vec3::E3 * a;
                let n = centre.norm();
                ChainBox {
                    flips: (is_odd(r1), is_odd(r2)),
                    dir: centre.scale(1.0 / n),
                    radius: Tower::finite(n),
                    height: Tower::finite(floor(c.x3)),
                }
            }
            None => ChainBox {
                flips: (false, false),
                dir,
                radius,
                height: Tower { tier: radius.tier, v: radius.v + ln(cos(theta)) }.normalized(),
            },
        }
    }
}

/// `-log diam` of `(L_0 o ... o L_{k-1})(R_k)` for the chain
/// `R_0, ..., R_k`, from the derivative of the composition at the centre
/// of `R_k`.
fn chain_neglog_diam(chain: &[ChainBox], q: f64) -> Tower {
    let k = chain.len() - 1;
    let mut m = Mat3::IDENTITY;
    let mut heights = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let next = &chain[i + 1];
        let (mut u1, mut u2) = arc_chart_inverse(next.dir);
        let n = crate::math::hypot(u1, u2);
        if n < 1e-6 {
            // DF is homogeneous near the centre; any short vector in the
            // same direction gives the same derivative
            let h = crate::math::hypot(next.dir.x1, next.dir.x2);
            if h > 0.0 {
                u1 = 1e-4 * next.dir.x1 / h;
                u2 = 1e-4 * next.dir.x2 / h;
            }
        }
        let inv = base_jacobian(u1, u2).inverse().unwrap_or(Mat3::IDENTITY);
        let (f1, f2) = chain[i].flips;
        let s = Mat3([
            [if f1 { -1.0 } else { 1.0 }, 0.0, 0.0],
            [0.0, if f2 { -1.0 } else { 1.0 }, 0.0],
            [0.0, 0.0, 1.0],
        ]);
        m = s.mul_mat(&inv).mul_mat(&m);
        heights.push(next.radius.ln());
    }
    let mut stretch: f64 = 0.0;
    for &(e1, e2) in &[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let v = Vec3::new(2.0 * q * e1, 2.0 * q * e2, BOX_HEIGHT);
        stretch = stretch.max(m.mul_vec(v).norm());
    }
    tower_sum(&heights).add(-ln(stretch))
}

/// Max pairwise distance of `L_0` applied to boundary samples of `b`.
pub fn pullback_diameter(b: &McBox, q: f64, cfg: &MapConfig, samples: usize, seed: u64) -> f64 {
    let bx = b.aabb(q);
    let mut rng = substream(seed, 7);
    let mut pts: Vec<Vec3> = bx.corners().to_vec();
    for _ in 0..samples {
        pts.push(bx.sample_boundary(&mut rng));
    }
    let img: Vec<Vec3> = pts.iter().map(|&p| lambda_branch(p, Branch::new(0.0, 0.0), cfg.shift)).collect();
    let mut d: f64 = 0.0;
    for i in 0..img.len() {
        for j in (i + 1)..img.len() {
            d = d.max(img[i].dist(img[j]));
        }
    }
    d
}

/// Linearised diameter of `L_0(b)`, for comparison with
/// [`pullback_diameter`].
pub fn pullback_diameter_linear(b: &McBox, q: f64, cfg: &MapConfig) -> f64 {
    let base = McBox { r: CellIndex::ORIGIN, level: 1 };
    let chain = [ChainBox::from_box(&base, q, cfg.shift), ChainBox::from_box(b, q, cfg.shift)];
    exp(-chain_neglog_diam(&chain, q).v)
}

/// One level of the nested construction.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NestedLevel {
    pub k: usize,
    /// `Delta_k`: least density of `A_{k+1}` in a member of `A_k`.
    pub density: Density,
    /// `-log d_k`.
    pub neglog_diam: Tower,
    /// `-log` of the envelope `alpha^{k-1} 3 c4 pi / E_*^k(l0)`.
    pub neglog_envelope: Tower,
    /// `3 - sum_{j<=k+1} |log Delta_j| / |log d_k|`; absent for `k = 0`.
    pub bound: Option<f64>,
}

impl NestedLevel {
    pub fn within_envelope(&self) -> bool {
        self.neglog_diam.cmp_value(&self.neglog_envelope) != core::cmp::Ordering::Less
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NestedReport {
    pub q: f64,
    pub base_level: i64,
    /// Level whose membership test stands in for the unresolvable deep
    /// levels.
    pub proxy_level: i64,
    pub eta: f64,
    pub base_density: Density,
    pub levels: Vec<NestedLevel>,
    pub collections: Vec<BoxCollection>,
    pub diagnostics: Vec<String>,
}

impl NestedReport {
    pub fn bounds(&self) -> Vec<f64> {
        self.levels.iter().filter_map(|l| l.bound).collect()
    }
}

/// `c5 / (216 c6)`.
pub fn eta(cfg: &MapConfig) -> f64 {
    cfg.inv_jac_lower / (216.0 * cfg.inv_jac_upper)
}

/// `log E_*^k(l0)` with `E_*(t) = e^t / 2`.
fn log_e_star(l0: f64, k: usize) -> Tower {
    let mut t = Tower::finite(l0);
    for _ in 0..k {
        t = t.exp_scaled(0.5);
    }
    t.ln()
}

/// The nested collections `A_0, ..., A_{k_max}`, the densities
/// `Delta_0, ..., Delta_{k_max+1}`, the diameters `d_k` and the lower
/// bounds on the dimension.
///
/// Members of `A_1` are represented by boxes of `U(l0)` met by the
/// samples. Deeper members are followed along representative chains: one
/// box near the axis at 1.5 times the inner radius of the parent image and,
/// at level 2, one near the rim of the cone at the inner radius. Below
/// level 1 the image points are far beyond double precision, so
/// membership is tested at the proxy level `l0 + 4` and transported; the
/// Jacobian of the outer chain is constant on such boxes to working
/// precision except for `L_0`, which is kept as a weight at level 1.
pub fn nested_dimension_bound(cfg: &MapConfig, k_max: usize, samples: usize, seed: u64) -> Result<NestedReport> {
    if !(1..=4).contains(&k_max) {
        return Err(domain("k_max must lie in 1..=4"));
    }
    let q = q_probe(1000);
    let lab = McMullen::new(cfg, q)?;
    let l0 = lab.base_level(10_000, seed)?;
    let proxy = l0 + DENSITY_SPAN;
    let a = cfg.shift;
    let mut diagnostics = Vec::new();

    let (base_density, boxes) = lab.density_with_boxes(l0, samples, seed);
    let members: Vec<McBox> = boxes.into_iter().collect();
    if members.is_empty() {
        return Err(Error::Domain("no member boxes found at the base level".into()));
    }
    let mut by_height = members.clone();
    by_height.sort_by_key(|b| (b.level, b.r.r1.abs() + b.r.r2.abs()));
    let mut reps: Vec<McBox> = Vec::new();
    let n = by_height.len();
    for i in 0..4.min(n) {
        reps.push(by_height[i]);
    }
    for i in 0..8 {
        reps.push(by_height[(i * (n - 1)) / 7]);
    }
    reps.sort();
    reps.dedup();

    let root = McBox { r: CellIndex::ORIGIN, level: l0 };
    let mut chains: Vec<Vec<ChainBox>> = Vec::new();
    let theta_q = FRAC_PI_2 * q;
    for b in &reps {
        let first = vec![ChainBox::from_box(&root, q, a), ChainBox::from_box(b, q, a)];
        chains.push(first);
    }
    let mut collections = vec![
        BoxCollection { level: 0, chains: vec![vec![root]], parents: vec![None] },
        BoxCollection {
            level: 1,
            chains: reps.iter().map(|b| vec![root, *b]).collect(),
            parents: vec![Some(0); reps.len()],
        },
    ];

    let mut levels = Vec::new();
    let base_pullback = lab.pullback_density(l0, None, samples, seed);
    levels.push(NestedLevel {
        k: 0,
        density: base_pullback,
        neglog_diam: Tower::finite(-ln(root.aabb(q).diameter())),
        neglog_envelope: Tower::finite(f64::NEG_INFINITY),
        bound: None,
    });

    let mut deltas = vec![base_pullback];
    for j in 1..=(k_max + 1) {
        let d = if j == 1 {
            reps.iter()
                .enumerate()
                .map(|(i, b)| lab.pullback_density(proxy, Some(b), samples, seed ^ (0x5eed + i as u64)))
                .min_by(|x, y| x.value.total_cmp(&y.value))
                .expect("at least one representative")
        } else {
            lab.pullback_density(proxy, None, samples, seed ^ (0xdee9 + j as u64))
        };
        deltas.push(d);
    }

    let log_scale = ln(3.0 * cfg.inv_upper * PI);
    for k in 1..=k_max {
        if k >= 2 {
            let mut next = Vec::new();
            for c in &chains {
                let parent = c[c.len() - 1].height;
                next.push(extend(c, ChainBox::inside(parent, 0.5 * theta_q, 0.32, 1.5, a)));
                if k == 2 {
                    next.push(extend(c, ChainBox::inside(parent, 0.9 * theta_q, 0.32, 1.05, a)));
                }
            }
            chains = next;
        }
        let neglog = if k == 1 {
            let d1 = reps
                .iter()
                .map(|b| pullback_diameter(b, q, cfg, 1000, seed))
                .fold(0.0, f64::max);
            Tower::finite(-ln(d1))
        } else {
            chains
                .iter()
                .map(|c| chain_neglog_diam(c, q))
                .min_by(|x, y| x.cmp_value(y))
                .expect("non-empty chains")
        };
        let env = log_e_star(l0 as f64, k).add(-((k as f64 - 1.0) * ln(cfg.alpha) + log_scale));
        let sum: f64 = deltas[1..=k + 1].iter().map(|d| ln(d.value).abs()).sum();
        let bound = match neglog.value() {
            Some(v) => 3.0 - sum / v,
            None => 3.0 - exp(ln(sum) - neglog.ln_value()),
        };
        if !bound.is_finite() {
            diagnostics.push(alloc::format!("level {k}: bound not finite, dropped"));
        }
        levels.push(NestedLevel {
            k,
            density: deltas[k],
            neglog_diam: neglog,
            neglog_envelope: env,
            bound: bound.is_finite().then_some(bound),
        });
        if k >= 2 {
            collections.push(BoxCollection {
                level: k,
                chains: Vec::new(),
                parents: Vec::new(),
            });
            diagnostics.push(alloc::format!(
                "level {k}: {} representative chains beyond double range are not listed as boxes",
                chains.len()
            ));
        }
    }
    Ok(NestedReport {
        q,
        base_level: l0,
        proxy_level: proxy,
        eta: eta(cfg),
        base_density,
        levels,
        collections,
        diagnostics,
    })
}

fn extend(c: &[ChainBox], b: ChainBox) -> Vec<ChainBox> {
    let mut v = c.to_vec();
    v.push(b);
    v
}

/// Verdict of a point classifier used for box counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    In,
    Out,
    /// Budget ran out; counted as occupied and flagged.
    Unknown,
}

/// Probe points per cell axis: at least `min_per_axis`, and enough that
/// the spacing is at most `max_spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeGrid {
    pub min_per_axis: usize,
    pub max_spacing: Option<f64>,
}

impl ProbeGrid {
    pub fn per_axis(&self, eps: f64) -> usize {
        let n = self.max_spacing.map_or(1, |h| crate::math::ceil(eps / h - 1e-9) as usize);
        n.max(self.min_per_axis).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoxCount {
    pub scales: Vec<f64>,
    pub counts: Vec<u64>,
    pub flagged: Vec<u64>,
    pub slope: f64,
    pub r2: f64,
}

/// Cells per axis of `window` at side `eps`.
pub fn grid_dims(window: &Aabb, eps: f64) -> [usize; 3] {
    let e = window.extent();
    [0, 1, 2].map(|i| (crate::math::ceil(e[i] / eps - 1e-9) as usize).max(1))
}

/// Verdict for cell `idx` of the grid of side `eps`.
pub fn classify_cell<C: Fn(Vec3) -> Probe + ?Sized>(
    classifier: &C,
    window: &Aabb,
    eps: f64,
    idx: [usize; 3],
    per_axis: usize,
) -> Probe {
    let mut unknown = false;
    let n = per_axis as f64;
    for i in 0..per_axis {
        for j in 0..per_axis {
            for k in 0..per_axis {
                let p = Vec3::new(
                    window.lo.x1 + eps * (idx[0] as f64 + (i as f64 + 0.5) / n),
                    window.lo.x2 + eps * (idx[1] as f64 + (j as f64 + 0.5) / n),
                    window.lo.x3 + eps * (idx[2] as f64 + (k as f64 + 0.5) / n),
                );
                match classifier(p) {
                    Probe::In => return Probe::In,
                    Probe::Unknown => unknown = true,
                    Probe::Out => {}
                }
            }
        }
    }
    if unknown {
        Probe::Unknown
    } else {
        Probe::Out
    }
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.len() < 2 {
        return Err(domain("need at least two scales"));
    }
    if scales.windows(2).any(|w| !(w[1] < w[0])) || scales.iter().any(|&s| !(s > 0.0)) {
        return Err(domain("scales must be positive and decreasing"));
    }
    Ok(())
}

/// Occupied cells per scale and the slope of `log N` against `log 1/eps`.
pub fn box_count<C: Fn(Vec3) -> Probe + ?Sized>(
    classifier: &C,
    window: &Aabb,
    scales: &[f64],
    probes: ProbeGrid,
) -> Result<BoxCount> {
    check_scales(scales)?;
    let mut counts = Vec::with_capacity(scales.len());
    let mut flagged = Vec::with_capacity(scales.len());
    for &eps in scales {
        let dims = grid_dims(window, eps);
        let per_axis = probes.per_axis(eps);
        let (mut c, mut f) = (0u64, 0u64);
        for i in 0..dims[0] {
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
        }
        counts.push(c);
        flagged.push(f);
    }
    finish_count(scales, counts, flagged)
}

/// Box count of a finite point set.
pub fn box_count_points(points: &[Vec3], window: &Aabb, scales: &[f64]) -> Result<BoxCount> {
    check_scales(scales)?;
    let mut counts = Vec::with_capacity(scales.len());
    for &eps in scales {
        let dims = grid_dims(window, eps);
        let mut cells = BTreeSet::new();
        for p in points.iter().filter(|p| window.contains(**p)) {
            let idx = [0, 1, 2].map(|i| (((p[i] - window.lo[i]) / eps) as usize).min(dims[i] - 1));
            cells.insert(idx);
        }
        counts.push(cells.len() as u64);
    }
    let flagged = alloc::vec![0; scales.len()];
    finish_count(scales, counts, flagged)
}

/// Assembles a [`BoxCount`] from per-scale counts.
pub fn finish_count(scales: &[f64], counts: Vec<u64>, flagged: Vec<u64>) -> Result<BoxCount> {
    if counts.iter().any(|&c| c == 0) {
        return Err(domain("empty scale in box count"));
    }
    let xs: Vec<f64> = scales.iter().map(|&s| -ln(s)).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| ln(c as f64)).collect();
    let (slope, r2) = fit_line(&xs, &ys);
    Ok(BoxCount { scales: scales.to_vec(), counts, flagged, slope, r2 })
}

/// Least-squares slope and `r^2`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, r2)
}

/// `psi(x) = exp(sqrt(log x))`.
pub fn psi(x: f64) -> Result<f64> {
    if !(x >= 1.0) {
        return Err(domain("psi needs x >= 1"));
    }
    Ok(exp(sqrt(ln(x))))
}

/// Membership in `Omega = {x3 > max(1, M), x1^2 + x2^2 < psi(x3)^2}`.
pub fn in_omega(p: Vec3, cfg: &MapConfig) -> bool {
    if !(p.x3 > cfg.high_level.max(1.0)) {
        return false;
    }
    // compare logs so huge heights stay finite
    let h2 = p.x1 * p.x1 + p.x2 * p.x2;
    h2 == 0.0 || 0.5 * ln(h2) < sqrt(ln(p.x3))
}

/// Predicate carrier for `Omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaRegion {
    pub cfg: MapConfig,
}

impl OmegaRegion {
    pub fn contains(&self, p: Vec3) -> bool {
        in_omega(p, &self.cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Absorption {
    /// Smallest `k` from which every computed iterate lies in `Omega`.
    pub first_entry: Option<usize>,
    pub inside: Vec<bool>,
    /// The iterates outgrew even the logarithmic bookkeeping.
    pub saturated: bool,
}

/// Entry of the orbit of `g_s(t)` into `Omega`. Iterates come from the
/// conjugacy `f^k(g_s(t)) = g_{sigma^k s}(E^k t)`; once `E^k(t)` exceeds
/// the exponent guard, membership is decided from the strip
/// `|f^k(x) - (2 s_k, E^k t)| <= c9`.
pub fn omega_absorption(s: &Itinerary, t: f64, depth: usize, tol: f64, cfg: &MapConfig) -> Result<Absorption> {
    let ts = endpoint_param(s, DEFAULT_DEPTH).t_s;
    if !(t > ts) {
        return Err(domain("absorption is claimed only above the endpoint parameter"));
    }
    let c9 = HairConstants::new(cfg).c9;
    let mut inside = Vec::new();
    let mut saturated = false;
    for k in 0..=depth {
        match e_iter(t, k) {
            Ok(tk) if tk <= EXP_GUARD => {
                let p = Hair::new(s.shift(k), cfg)?.point(tk, tol)?.point;
                inside.push(in_omega(p, cfg));
            }
            _ => {
                let lx = log_e_iter(t, k);
                if !lx.is_finite() {
                    saturated = true;
                    break;
                }
                let ls = s.log_norm_at(k);
                let lh = log_add_exp(ls + core::f64::consts::LN_2, ln(c9));
                inside.push(lh < sqrt(lx + ln(1.0 - c9 * exp(-lx))));
            }
        }
    }
    let first_entry = if inside.last() == Some(&true) {
        Some(inside.iter().rposition(|&b| !b).map_or(0, |i| i + 1))
    } else {
        None
    };
    Ok(Absorption { first_entry, inside, saturated })
}

/// Covering statistics at level `k`, as logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverStats {
    pub k: usize,
    /// `N_k = 5 psi(3/2 E^k)^2 E^k`.
    pub log_n: f64,
    /// `d_k = 2 sqrt3 c4 pi / E^k`.
    pub log_d: f64,
    /// `r_k = kappa tau^k / prod_{j<k} E^j`.
    pub log_r: f64,
    /// `log(N_k d_k^rho / r_k^3)`.
    pub log_ratio: f64,
}

impl CoverStats {
    pub fn ratio(&self) -> f64 {
        exp(self.log_ratio)
    }
}

/// Constant of the inner radius estimate.
pub const KAPPA: f64 = 0.25;

/// Covering statistics for the hair point `g_s(t)`, `t > t_s`.
pub fn karpinska_cover_stats(s: &Itinerary, t: f64, k: usize, rho: f64, cfg: &MapConfig) -> Result<CoverStats> {
    if !(rho > 1.0) {
        return Err(domain("rho must exceed 1"));
    }
    if k == 0 {
        return Err(domain("k must be at least 1"));
    }
    if !(t > endpoint_param(s, DEFAULT_DEPTH).t_s) {
        return Err(domain("t must exceed the endpoint parameter"));
    }
    let lek = log_e_iter(t, k);
    if !lek.is_finite() {
        return Err(Error::Overflow { index: k });
    }
    let tau = 0.5 * cfg.inv_lower;
    let log_n = ln(5.0) + 2.0 * sqrt(ln(1.5) + lek) + lek;
    let log_d = ln(2.0 * sqrt(3.0) * cfg.inv_upper * PI) - lek;
    let prod: f64 = (1..k).map(|j| log_e_iter(t, j)).sum();
    let log_r = ln(KAPPA) + k as f64 * ln(tau) - prod;
    Ok(CoverStats { k, log_n, log_d, log_r, log_ratio: log_n + rho * log_d - 3.0 * log_r })
}
