//! The Zorich map `F`, its translate `f = F - (0,0,a)`, the constants that
//! control it, and its inverse branches.
//!
//! `F` is built on the beam `[-1,1]^2 x R` as `e^{x3} h(x1,x2)` and extended
//! to all of `R^3` by reflecting across beam faces. On the folded point `u`
//! of the cell `r` this reads `e^{x3} (w1, w2, (-1)^{r1+r2} w3)`, `w = h(u)`.

use crate::error::{config, domain, Error, Result};
use crate::geometry::{arc_chart, arc_chart_inverse, ArcChart, SquareChart};
use crate::linalg::{Mat3, Vec3};
use crate::math::{ceil, exp, ln};

/// Exponent beyond which `e^{x3}` is treated as overflow.
pub const EXP_GUARD: f64 = 700.0;

/// Relative central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Distance from the nonsmooth set (diagonals, faces) below which
/// derivative samples are rejected.
pub const NONSMOOTH_RADIUS: f64 = 1e-4;

/// Index `(r1, r2)` of the beam `|x1 - 2 r1| <= 1, |x2 - 2 r2| <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "[i64; 2]", into = "[i64; 2]"))]
pub struct CellIndex {
    pub r1: i64,
    pub r2: i64,
}

impl From<[i64; 2]> for CellIndex {
    fn from(a: [i64; 2]) -> Self {
        CellIndex::new(a[0], a[1])
    }
}

impl From<CellIndex> for [i64; 2] {
    fn from(c: CellIndex) -> Self {
        [c.r1, c.r2]
    }
}

impl CellIndex {
    pub const ORIGIN: CellIndex = CellIndex { r1: 0, r2: 0 };

    pub const fn new(r1: i64, r2: i64) -> Self {
        CellIndex { r1, r2 }
    }

    /// `(r1 + r2) mod 2`; even cells map into the upper half-space.
    pub fn parity(&self) -> u8 {
        (self.r1.wrapping_add(self.r2) & 1) as u8
    }

    pub fn is_even(&self) -> bool {
        self.parity() == 0
    }

    pub fn norm(&self) -> f64 {
        crate::math::hypot(self.r1 as f64, self.r2 as f64)
    }

    pub fn branch(&self) -> Branch {
        Branch::new(self.r1 as f64, self.r2 as f64)
    }
}

/// A cell given by (possibly huge) integer-valued doubles, for itineraries
/// whose entries outgrow `i64`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub r1: f64,
    pub r2: f64,
}

impl Branch {
    pub fn new(r1: f64, r2: f64) -> Self {
        Branch { r1, r2 }
    }

    fn flips(&self) -> (bool, bool) {
        (is_odd(self.r1), is_odd(self.r2))
    }

    pub fn norm(&self) -> f64 {
        crate::math::hypot(self.r1, self.r2)
    }
}

pub(crate) fn is_odd(r: f64) -> bool {
    r % 2.0 != 0.0
}

pub(crate) fn fold(x: f64) -> (f64, f64) {
    // nearest integer to x/2, ties toward the smaller index
    let r = ceil(x / 2.0 - 0.5);
    let u = x - 2.0 * r;
    (r, if is_odd(r) { -u } else { u })
}

/// Cell of `(x1, x2)` and the folded point in `Q`.
pub fn cell_of(x1: f64, x2: f64) -> (CellIndex, crate::geometry::SquarePoint) {
    let (r1, u1) = fold(x1);
    let (r2, u2) = fold(x2);
    let p = crate::geometry::SquarePoint { p1: u1.clamp(-1.0, 1.0), p2: u2.clamp(-1.0, 1.0) };
    (CellIndex::new(r1 as i64, r2 as i64), p)
}

/// Parameters and derived constants of `f_a`.
///
/// Serialized field names follow the usual notation: `a`, `m`, `M`,
/// `alpha`, `c1` .. `c6`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MapConfig {
    /// Downward shift `a`.
    #[cfg_attr(feature = "serde", serde(rename = "a"))]
    pub shift: f64,
    /// Below this height `f` contracts by `alpha`.
    #[cfg_attr(feature = "serde", serde(rename = "m"))]
    pub low_level: f64,
    /// Above this height `f` expands by `1/alpha`.
    #[cfg_attr(feature = "serde", serde(rename = "M"))]
    pub high_level: f64,
    pub alpha: f64,
    /// `c1 e^{x3} <= l(Df) <= |Df| <= c2 e^{x3}`.
    #[cfg_attr(feature = "serde", serde(rename = "c1"))]
    pub deriv_lower: f64,
    #[cfg_attr(feature = "serde", serde(rename = "c2"))]
    pub deriv_upper: f64,
    /// `c3/|x| <= l(DLambda(x))`, `|DLambda(x)| <= c4/|x|`.
    #[cfg_attr(feature = "serde", serde(rename = "c3"))]
    pub inv_lower: f64,
    #[cfg_attr(feature = "serde", serde(rename = "c4"))]
    pub inv_upper: f64,
    /// `c5/|x|^3 <= J_Lambda(x) <= c6/|x|^3`.
    #[cfg_attr(feature = "serde", serde(rename = "c5"))]
    pub inv_jac_lower: f64,
    #[cfg_attr(feature = "serde", serde(rename = "c6"))]
    pub inv_jac_upper: f64,
}

impl MapConfig {
    /// Builds the full constant set from the derivative envelope.
    pub fn from_envelope(alpha: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(config("alpha must lie in (0,1)"));
        }
        if !(c1 > 0.0 && c1 <= c2 && c2.is_finite()) {
            return Err(config("derivative envelope must satisfy 0 < c1 <= c2"));
        }
        let high = ln(1.0 / (alpha * c1));
        let low = ln(alpha / c2);
        let shift = minimal_shift(low, high);
        Self::assemble(alpha, c1, c2, low, high, shift)
    }

    /// Same constants with a larger shift.
    pub fn with_shift(&self, shift: f64) -> Result<Self> {
        if !(shift >= self.min_admissible_shift()) {
            return Err(config("shift must satisfy a >= e^M - m"));
        }
        Self::assemble(self.alpha, self.deriv_lower, self.deriv_upper, self.low_level, self.high_level, shift)
    }

    fn assemble(alpha: f64, c1: f64, c2: f64, low: f64, high: f64, shift: f64) -> Result<Self> {
        if !(high > 0.0) {
            return Err(config("expansion level M must be positive"));
        }
        let grow = 1.0 + shift / high;
        let inv_lower = 1.0 / (c2 * grow);
        let inv_upper = 1.0 / c1;
        let cfg = MapConfig {
            shift,
            low_level: low,
            high_level: high,
            alpha,
            deriv_lower: c1,
            deriv_upper: c2,
            inv_lower,
            inv_upper,
            inv_jac_lower: inv_lower * inv_lower * inv_lower,
            inv_jac_upper: inv_upper * inv_upper * inv_upper,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn min_admissible_shift(&self) -> f64 {
        exp(self.high_level) - self.low_level
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.shift,
            self.low_level,
            self.high_level,
            self.alpha,
            self.deriv_lower,
            self.deriv_upper,
            self.inv_lower,
            self.inv_upper,
            self.inv_jac_lower,
            self.inv_jac_upper,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(config("non-finite constant"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config("alpha must lie in (0,1)"));
        }
        if !(self.low_level < self.high_level) {
            return Err(config("need m < M"));
        }
        if !(self.shift >= self.min_admissible_shift()) {
            return Err(config("shift must satisfy a >= e^M - m"));
        }
        if !(self.deriv_lower > 0.0 && self.deriv_lower <= self.deriv_upper) {
            return Err(config("need 0 < c1 <= c2"));
        }
        if [self.inv_lower, self.inv_upper, self.inv_jac_lower, self.inv_jac_upper].iter().any(|&c| c <= 0.0) {
            return Err(config("inverse envelopes must be positive"));
        }
        Ok(())
    }

    /// `E3 * a`.
    pub fn shift_vec(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.shift)
    }
}

/// `e^M - m` rounded up to three decimals.
fn minimal_shift(low: f64, high: f64) -> f64 {
    let need = exp(high) - low;
    let mut a = ceil(need * 1000.0) / 1000.0;
    while a < need {
        a += 1e-3;
    }
    a
}

/// `F` for an arbitrary square chart, without overflow checks.
#[inline]
pub fn zorich_with<C: SquareChart + ?Sized>(chart: &C, x: Vec3) -> Vec3 {
    let (r1, u1) = fold(x.x1);
    let (r2, u2) = fold(x.x2);
    let w = chart.chart(u1.clamp(-1.0, 1.0), u2.clamp(-1.0, 1.0));
    let s = exp(x.x3);
    let flip = is_odd(r1) != is_odd(r2);
    Vec3::new(s * w.x1, s * w.x2, if flip { -s * w.x3 } else { s * w.x3 })
}

#[inline]
pub(crate) fn zorich(x: Vec3) -> Vec3 {
    zorich_with(&ArcChart, x)
}

/// `f = F - (0,0,a)` without overflow checks.
#[inline]
pub(crate) fn f_raw(x: Vec3, shift: f64) -> Vec3 {
    let mut y = zorich(x);
    y.x3 -= shift;
    y
}

fn overflow_check(x: Vec3) -> Result<()> {
    if !x.is_finite() {
        return Err(domain("non-finite point"));
    }
    if x.x3 > EXP_GUARD {
        return Err(Error::Overflow { index: 0 });
    }
    Ok(())
}

/// The Zorich map `F`.
#[allow(non_snake_case)]
pub fn eval_F(x: Vec3, _cfg: &MapConfig) -> Result<Vec3> {
    overflow_check(x)?;
    Ok(zorich(x))
}

/// `f_a(x) = F(x) - (0,0,a)`.
pub fn eval_f(x: Vec3, cfg: &MapConfig) -> Result<Vec3> {
    overflow_check(x)?;
    Ok(f_raw(x, cfg.shift))
}

/// Central-difference Jacobian of `g` at `x`.
pub fn jacobian_fd<G: Fn(Vec3) -> Vec3>(g: G, x: Vec3) -> Mat3 {
    let mut cols = [Vec3::ZERO; 3];
    for (i, col) in cols.iter_mut().enumerate() {
        let h = FD_STEP * x[i].abs().max(1.0);
        let mut e = Vec3::ZERO;
        match i {
            0 => e.x1 = h,
            1 => e.x2 = h,
            _ => e.x3 = h,
        }
        *col = (g(x + e) - g(x - e)).scale(0.5 / h);
    }
    Mat3::from_columns(cols[0], cols[1], cols[2])
}

/// True when the folded point of `(x1,x2)` is near a diagonal, the centre
/// or a face of its square.
pub fn near_nonsmooth_folded(x1: f64, x2: f64, radius: f64) -> bool {
    let (_, u1) = fold(x1);
    let (_, u2) = fold(x2);
    crate::geometry::near_nonsmooth(u1, u2, radius) || 1.0 - u1.abs().max(u2.abs()) < radius
}

/// Derives `c1, c2` from a `resolution x resolution` grid of cell-centred
/// samples of `DF(x1, x2, 0)`, widened outward by 5%, and the remaining
/// constants from them.
pub fn derive_constants(alpha: f64, resolution: usize) -> Result<MapConfig> {
    if resolution < 64 {
        return Err(domain("resolution must be at least 64"));
    }
    let (lo, hi) = envelope_at_base(resolution);
    if !(lo > 0.0) {
        return Err(config("degenerate derivative sampling"));
    }
    MapConfig::from_envelope(alpha, lo / 1.05, hi * 1.05)
}

/// Sampled `(min l(DF), max |DF|)` at height 0.
pub fn envelope_at_base(resolution: usize) -> (f64, f64) {
    let n = resolution;
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p1 = -1.0 + (2.0 * i as f64 + 1.0) / n as f64;
            let p2 = -1.0 + (2.0 * j as f64 + 1.0) / n as f64;
            if near_nonsmooth_folded(p1, p2, NONSMOOTH_RADIUS) {
                continue;
            }
            let sv = jacobian_fd(zorich, Vec3::new(p1, p2, 0.0)).singular_values();
            lo = lo.min(sv[2]);
            hi = hi.max(sv[0]);
        }
    }
    (lo, hi)
}

/// Inverse branch onto `P(b) x R`, no domain checks.
#[inline]
pub(crate) fn lambda_branch(y: Vec3, b: Branch, shift: f64) -> Vec3 {
    let z = Vec3::new(y.x1, y.x2, y.x3 + shift);
    let n = z.norm();
    let (u1, u2) = arc_chart_inverse(z.scale(1.0 / n));
    let (f1, f2) = b.flips();
    Vec3::new(
        2.0 * b.r1 + if f1 { -u1 } else { u1 },
        2.0 * b.r2 + if f2 { -u2 } else { u2 },
        ln(n),
    )
}

/// The branch `Lambda^r : H_{>=M} -> T(r)` of `f^{-1}`.
pub fn lambda(y: Vec3, r: CellIndex, cfg: &MapConfig) -> Result<Vec3> {
    if !y.is_finite() {
        return Err(domain("non-finite point"));
    }
    if y.x3 < cfg.high_level {
        return Err(domain("lambda needs y3 >= M"));
    }
    if !r.is_even() {
        return Err(domain("lambda needs a cell of even parity"));
    }
    Ok(lambda_branch(y, r.branch(), cfg.shift))
}

/// `DLambda(y) = Df(Lambda(y))^{-1}`, by finite differences of `f`.
pub fn lambda_derivative(y: Vec3, r: CellIndex, cfg: &MapConfig) -> Result<Mat3> {
    let x = lambda(y, r, cfg)?;
    let shift = cfg.shift;
    jacobian_fd(|p| f_raw(p, shift), x)
        .inverse()
        .ok_or_else(|| domain("singular derivative"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dilatation {
    /// `sup |Df|^3 / J_f`.
    pub outer: f64,
    /// `sup J_f / l(Df)^3`.
    pub inner: f64,
    pub samples: usize,
}

/// Sampled outer and inner dilatation of `f` over a box.
pub fn dilatation_estimate(samples: usize, region: &crate::sampling::Aabb, seed: u64) -> Dilatation {
    dilatation_estimate_of(&ArcChart, samples, region, seed)
}

pub fn dilatation_estimate_of<C: SquareChart + ?Sized>(
    chart: &C,
    samples: usize,
    region: &crate::sampling::Aabb,
    seed: u64,
) -> Dilatation {
    let mut rng = crate::sampling::rng(seed);
    let mut out = Dilatation { outer: 1.0, inner: 1.0, samples: 0 };
    let mut tries = 0usize;
    while out.samples < samples && tries < samples.saturating_mul(20) {
        tries += 1;
        let x = region.sample(&mut rng);
        if near_nonsmooth_folded(x.x1, x.x2, NONSMOOTH_RADIUS) {
            continue;
        }
        let d = jacobian_fd(|p| zorich_with(chart, p), x);
        let jac = d.det().abs();
        if !(jac > 0.0) {
            continue;
        }
        let sv = d.singular_values();
        out.outer = out.outer.max((sv[0] * sv[0] * sv[0]) / jac);
        out.inner = out.inner.max(jac / (sv[2] * sv[2] * sv[2]));
        out.samples += 1;
    }
    out
}

/// Unit vector of `F(x1, x2, 0)` for the base chart.
pub fn base_direction(u1: f64, u2: f64) -> Vec3 {
    arc_chart(u1, u2)
}

/// Sampled derivative envelopes on both half-spaces.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvelopeCheck {
    pub samples: usize,
    /// Largest `|DF|` seen below `m`; at most `alpha` when the check holds.
    pub max_norm_low: f64,
    /// Least `l(DF)` seen above `M`; at least `1/alpha` when it holds.
    pub min_stretch_high: f64,
    pub low_violations: usize,
    pub high_violations: usize,
}

/// Samples `DF` at `samples` points of each of `x3 <= m` and `x3 >= M`,
/// with `|x1|, |x2| <= 10` and heights within 8 of the threshold.
pub fn envelope_check(cfg: &MapConfig, samples: usize, seed: u64) -> EnvelopeCheck {
    use rand::Rng;
    let mut rng = crate::sampling::substream(seed, 1);
    let mut out = EnvelopeCheck {
        samples,
        max_norm_low: 0.0,
        min_stretch_high: f64::INFINITY,
        low_violations: 0,
        high_violations: 0,
    };
    let draw = |rng: &mut crate::sampling::LabRng, lo: f64| loop {
        let x = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), lo + rng.gen_range(0.0..8.0));
        if !near_nonsmooth_folded(x.x1, x.x2, NONSMOOTH_RADIUS) {
            return x;
        }
    };
    for _ in 0..samples {
        let mut x = draw(&mut rng, 0.0);
        x.x3 = cfg.low_level - x.x3;
        let n = jacobian_fd(zorich, x).op_norm();
        out.max_norm_low = out.max_norm_low.max(n);
        out.low_violations += usize::from(n > cfg.alpha);
        let y = draw(&mut rng, cfg.high_level);
        let l = jacobian_fd(zorich, y).min_stretch();
        out.min_stretch_high = out.min_stretch_high.min(l);
        out.high_violations += usize::from(l < 1.0 / cfg.alpha);
    }
    out
}

/// Largest `|Lambda(p) - Lambda(q)| / |p - q|` over `samples` random
/// pairs in `H_{>=M}` at distance up to 1 and random even cells.
pub fn branch_contraction(cfg: &MapConfig, samples: usize, seed: u64) -> f64 {
    use rand::Rng;
    let mut rng = crate::sampling::substream(seed, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let r1: i64 = rng.gen_range(-50..=50);
        let r2: i64 = rng.gen_range(-25..=25) * 2 + (r1 & 1);
        let b = CellIndex::new(r1, r2).branch();
        let p = Vec3::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), cfg.high_level + rng.gen_range(0.0..40.0));
        let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut q = p + d.scale(rng.gen::<f64>() / d.norm().max(1e-300));
        q.x3 = q.x3.max(cfg.high_level);
        let dist = p.dist(q);
        if dist == 0.0 {
            continue;
        }
        worst = worst.max(lambda_branch(p, b, cfg.shift).dist(lambda_branch(q, b, cfg.shift)) / dist);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MapConfig {
        derive_constants(0.5, 64).unwrap()
    }

    #[test]
    fn envelopes_hold_off_the_sample_grid() {
        let c = cfg();
        let e = envelope_check(&c, 2000, 9);
        assert_eq!(e.low_violations + e.high_violations, 0, "{e:?}");
        assert!(branch_contraction(&c, 2000, 9) <= c.alpha);
    }

    #[test]
    fn fold_examples() {
        let (c, p) = cell_of(0.3, -0.4);
        assert_eq!(c, CellIndex::new(0, 0));
        assert_eq!((p.p1, p.p2), (0.3, -0.4));
        let (c, p) = cell_of(2.5, 0.0);
        assert_eq!(c, CellIndex::new(1, 0));
        assert_eq!((p.p1, p.p2), (-0.5, 0.0));
        // faces go to the smaller index
        assert_eq!(cell_of(1.0, -1.0).0, CellIndex::new(0, -1));
        assert_eq!(cell_of(3.0, 0.0).0, CellIndex::new(1, 0));
        let (c, p) = cell_of(0.7 + 4.0, 0.2);
        assert_eq!(c, CellIndex::new(2, 0));
        assert!((p.p1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn map_examples() {
        let c = cfg();
        assert_eq!(eval_F(Vec3::ZERO, &c).unwrap(), Vec3::E3);
        let y = eval_F(Vec3::new(2.0, 0.0, 0.0), &c).unwrap();
        assert_eq!(y, Vec3::new(0.0, 0.0, -1.0));
        let y = eval_f(Vec3::ZERO, &c).unwrap();
        assert_eq!(y, Vec3::new(0.0, 0.0, 1.0 - c.shift));
        assert!(matches!(eval_F(Vec3::new(0.0, 0.0, 800.0), &c), Err(Error::Overflow { index: 0 })));
    }

    #[test]
    fn constants_are_consistent() {
        let c = cfg();
        assert!(c.low_level < c.high_level);
        assert!(c.shift >= exp(c.high_level) - c.low_level);
        assert!(c.shift - (exp(c.high_level) - c.low_level) < 1.001e-3);
        assert!((c.high_level - ln(1.0 / (c.alpha * c.deriv_lower))).abs() < 1e-15);
        assert!((c.low_level - ln(c.alpha / c.deriv_upper)).abs() < 1e-15);
        // DF contains the unit column h, so 1 sits inside the envelope
        assert!(c.deriv_lower < 1.0 && c.deriv_upper > 1.0);
        assert!(c.with_shift(c.shift - 0.01).is_err());
        assert!(c.with_shift(c.shift + 1.0).is_ok());
        assert!(derive_constants(0.5, 32).is_err());
        assert!(derive_constants(1.5, 64).is_err());
    }

    #[test]
    fn axis_formula() {
        let c = cfg();
        for &(r1, r2) in &[(0, 0), (1, 1), (-3, 5), (2, 0)] {
            let y = 3.7;
            let x = lambda(Vec3::new(0.0, 0.0, y), CellIndex::new(r1, r2), &c).unwrap();
            assert_eq!(x.x1, 2.0 * r1 as f64);
            assert_eq!(x.x2, 2.0 * r2 as f64);
            assert!((x.x3 - ln(y + c.shift)).abs() < 1e-15);
        }
    }

    #[test]
    fn lambda_domain() {
        let c = cfg();
        assert!(lambda(Vec3::new(0.0, 0.0, c.high_level - 0.1), CellIndex::ORIGIN, &c).is_err());
        assert!(lambda(Vec3::new(0.0, 0.0, 10.0), CellIndex::new(1, 0), &c).is_err());
    }

    #[test]
    fn dilatation_is_at_least_one() {
        let region = crate::sampling::Aabb::new(Vec3::new(-3.0, -3.0, 0.0), Vec3::new(3.0, 3.0, 1.0));
        let d = dilatation_estimate(2000, &region, 7);
        assert!(d.outer >= 1.0 && d.inner >= 1.0);
        assert!(d.outer.is_finite() && d.inner.is_finite());
        assert_eq!(d.samples, 2000);
    }
}
