//! Hairs: the curves `g_s : [t_s, inf) -> J` built from inverse branches,
//! their endpoints, and the reverse direction (orbit to itinerary and
//! hair parameter).
//!
//! `g_k(t) = (L_0 o ... o L_k)(0, 0, E^{k+1}(t) + M)` with `L_j` the branch
//! into the beam of `s_j`. Once `E^{k+1}(t)` overflows the composition
//! starts one level lower, where `L_j(0,0,E^{j+1}(t)+M)` still has a closed
//! form in terms of `E^j(t)`.

use alloc::vec::Vec;

use crate::error::{domain, Error, Result};
use crate::linalg::Vec3;
use crate::map::{cell_of, f_raw, lambda_branch, Branch, CellIndex, MapConfig, EXP_GUARD};
use crate::math::{exp, ln, ln_1p, log_add_exp, powf, PI};
use crate::symbolic::{e_inv_iter, e_iter, e_orbit, log_e_iter, t_k_of, Itinerary};

pub const DEPTH_CAP: usize = 60;

/// Constants of the hair construction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HairConstants {
    /// `2 + log(M + a)`.
    pub c7: f64,
    /// Sup of the single-level step bound.
    pub c8: f64,
    /// Strip width `c7 + c8 / (1 - alpha)`.
    pub c9: f64,
}

impl HairConstants {
    pub fn new(cfg: &MapConfig) -> Self {
        let c7 = 2.0 + ln(cfg.high_level + cfg.shift);
        let c8 = step_bound_sup(cfg, c7);
        HairConstants { c7, c8, c9: c7 + c8 / (1.0 - cfg.alpha) }
    }
}

/// `c4 pi (u + c7 + M) / max(u - c7, M)`.
fn single_step(cfg: &MapConfig, c7: f64, u: f64) -> f64 {
    let m = cfg.high_level;
    cfg.inv_upper * PI * (u + c7 + m) / (u - c7).max(m)
}

/// Sup of [`single_step`] over `u = E^k(t) >= 0`; the probe covers every
/// `u`, so the constant serves all itineraries.
fn step_bound_sup(cfg: &MapConfig, c7: f64) -> f64 {
    // increasing up to the kink u = c7 + M, decreasing after it
    let kink = c7 + cfg.high_level;
    let mut sup = single_step(cfg, c7, kink);
    for i in 0..=4000 {
        let u = kink * 4.0 * i as f64 / 4000.0;
        sup = sup.max(single_step(cfg, c7, u));
    }
    sup
}

/// Smallest integer `H` in `1..=20` for which the persistence estimate
/// `e^H e^{x3} - a - |x'| - 4 > |x'| + H` holds for every sampled height
/// `x3 >= M` and every `|x'|` compatible with it.
pub fn persistence_gap(cfg: &MapConfig, samples: usize, seed: u64) -> Option<f64> {
    use rand::Rng;
    let mut rng = crate::sampling::rng(seed);
    let pts: Vec<(f64, f64)> = (0..samples)
        .map(|_| {
            let x3 = cfg.high_level + 20.0 * rng.gen::<f64>();
            let e = exp(x3);
            let lo = (e - cfg.shift).max(0.0);
            (e, lo + (e + cfg.shift - lo) * rng.gen::<f64>())
        })
        .collect();
    (1..=20).map(|h| h as f64).find(|&h| {
        pts.iter().all(|&(e, next)| {
            let worst = next.max(e + cfg.shift);
            exp(h) * e - cfg.shift - worst - 4.0 > worst + h
        })
    })
}

fn branch(s: &Itinerary, k: usize) -> Result<Branch> {
    s.branch_at(k).ok_or(Error::DepthReduction { level: k })
}

/// Hair machinery for one itinerary under one configuration.
#[derive(Debug, Clone)]
pub struct Hair {
    pub itinerary: Itinerary,
    pub cfg: MapConfig,
    pub consts: HairConstants,
    /// `tau_k = max_{k <= j <= horizon} t_j`.
    pub tau: Vec<f64>,
}

/// One computed hair point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HairPoint {
    pub t: f64,
    pub point: Vec3,
    /// Nominal depth `k` of `g_k`.
    pub depth: usize,
    /// Level at which the composition actually started.
    pub start_level: usize,
    /// Bound on `|g(t) - point|`.
    pub error_bound: f64,
    /// The tolerance was missed or the bound rests on evidence only.
    pub flagged: bool,
}

impl Hair {
    pub fn new(itinerary: Itinerary, cfg: &MapConfig) -> Result<Self> {
        itinerary.validate()?;
        cfg.validate()?;
        let horizon = DEPTH_CAP + 20;
        let t: Vec<f64> = (0..=horizon).map(|k| t_k_of(&itinerary, k)).collect();
        let mut tau = t;
        for k in (0..horizon).rev() {
            tau[k] = tau[k].max(tau[k + 1]);
        }
        Ok(Hair { itinerary, cfg: *cfg, consts: HairConstants::new(cfg), tau })
    }

    pub fn tau(&self, k: usize) -> f64 {
        self.tau[k.min(self.tau.len() - 1)]
    }

    /// `g_k(t)` and the level the composition started from.
    pub fn g_k_detail(&self, t: f64, k: usize) -> Result<(Vec3, usize)> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(domain("hair parameter must be finite and >= 0"));
        }
        let s = &self.itinerary;
        let (a, m) = (self.cfg.shift, self.cfg.high_level);
        let orbit = e_orbit(t, k + 1);
        let top = orbit.len() - 1;
        let (mut p, start) = if top > k {
            let y = Vec3::new(0.0, 0.0, orbit[k + 1] + m);
            (lambda_branch(y, branch(s, k)?, a), k)
        } else {
            // log(E^{j+1}(t) + M + a) = E^j(t) + log(1 + (M + a - 1) e^{-E^j(t)})
            let ej = orbit[top];
            let b = branch(s, top)?;
            let x3 = ej + ln_1p((m + a - 1.0) * exp(-ej));
            (Vec3::new(2.0 * b.r1, 2.0 * b.r2, x3), top)
        };
        for i in (0..start).rev() {
            p = lambda_branch(p, branch(s, i)?, a);
        }
        Ok((p, start))
    }

    pub fn g_k(&self, t: f64, k: usize) -> Result<Vec3> {
        self.g_k_detail(t, k).map(|r| r.0)
    }

    /// `log` of the step bound `beta_i(t)` on
    /// `|L_{i-1}(L_i(0,0,E^{i+1}+M)) - L_{i-1}(0,0,E^i+M)|`.
    fn log_step(&self, t: f64, i: usize) -> f64 {
        let c = &self.consts;
        let m = self.cfg.high_level;
        let lc = ln(self.cfg.inv_upper * PI);
        let ls = self.itinerary.log_norm_at(i);
        let den = match e_iter(t, i) {
            Ok(u) => ln((u - c.c7).max(m)),
            Err(_) => log_e_iter(t, i),
        };
        if ls.is_finite() || ls == f64::NEG_INFINITY {
            let num = log_add_exp(ls + core::f64::consts::LN_2, ln(c.c7 + m));
            return lc + num - den;
        }
        // |s_i| and E^i(t) both beyond range: 2|s_i| <= E^i(t) iff t_i <= t
        if t_k_of(&self.itinerary, i) <= t && den.is_infinite() {
            lc + 1e-12
        } else {
            f64::INFINITY
        }
    }

    /// `log` of the contraction of `L_l` near level-`l+1` hair points:
    /// `min(alpha, c4 pi / max(E^{l+1}(t) - c9, M))`.
    fn log_contraction(&self, t: f64, l: usize) -> f64 {
        let c = &self.consts;
        let m = self.cfg.high_level;
        let den = match e_iter(t, l + 1) {
            Ok(u) => ln((u - c.c9).max(m)),
            Err(_) => log_e_iter(t, l + 1),
        };
        ln(self.cfg.alpha).min(ln(self.cfg.inv_upper * PI) - den)
    }

    /// Bound on `|g(t) - g_k(t)|` from the actual entries of the itinerary:
    /// `sum_{i > k} beta_i(t) prod_{l < i-1} contraction_l(t)`.
    pub fn tail_bound(&self, t: f64, k: usize) -> f64 {
        let mut log_prod = 0.0;
        for l in 0..k.saturating_sub(1) {
            log_prod += self.log_contraction(t, l);
        }
        let mut sum = 0.0;
        let mut last = 0.0;
        for i in (k + 1)..=(k + DEPTH_CAP) {
            if i >= 2 {
                log_prod += self.log_contraction(t, i - 2);
            }
            if log_prod == f64::NEG_INFINITY || exp(log_prod) == 0.0 {
                last = 0.0;
                break;
            }
            let term = exp(log_prod + self.log_step(t, i));
            sum += term;
            last = term;
        }
        let alpha = self.cfg.alpha;
        sum + last * alpha / (1.0 - alpha)
    }

    /// `alpha^{k-1} c8 / (1 - alpha)`, valid for `t >= tau_k`.
    pub fn geometric_bound(&self, k: usize) -> f64 {
        let alpha = self.cfg.alpha;
        powf(alpha, (k as i32 - 1) as f64) * self.consts.c8 / (1.0 - alpha)
    }

    /// Smallest depth `k <= 60` whose geometric bound is below `tol/2`
    /// with `t >= tau_k`, then `g_k(t)` with that bound plus the
    /// saturation residual.
    pub fn point(&self, t: f64, tol: f64) -> Result<HairPoint> {
        if !(tol > 0.0) {
            return Err(domain("tolerance must be positive"));
        }
        let chosen = (1..=DEPTH_CAP).find(|&k| t >= self.tau(k) && self.geometric_bound(k) < 0.5 * tol);
        let k = chosen.unwrap_or(DEPTH_CAP);
        let (p, start) = self.g_k_detail(t, k)?;
        let residual = if start < k { self.tail_bound(t, start) } else { 0.0 };
        let error_bound = if chosen.is_some() {
            self.geometric_bound(k) + residual
        } else {
            self.tail_bound(t, start)
        };
        Ok(HairPoint {
            t,
            point: p,
            depth: k,
            start_level: start,
            error_bound,
            flagged: !(error_bound < tol),
        })
    }

    /// `|g_k(t) - g_{k-1}(t)|` for `k = 1..=kmax`.
    pub fn depth_deltas(&self, t: f64, kmax: usize) -> Result<Vec<f64>> {
        let mut prev = self.g_k(t, 0)?;
        let mut out = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let cur = self.g_k(t, k)?;
            out.push(cur.dist(prev));
            prev = cur;
        }
        Ok(out)
    }

    /// Measured geometric rate of the depth deltas `d_k`: the smallest
    /// `rho` with `d_k <= d_1 rho^{k-1}` for every `k` whose delta stands
    /// clear of rounding noise. `None` when fewer than two deltas qualify.
    pub fn depth_rate(&self, t: f64, kmax: usize) -> Result<Option<f64>> {
        let d = self.depth_deltas(t, kmax)?;
        let noise = 1e-11 * self.g_k(t, kmax)?.norm().max(1.0);
        let first = match d.first() {
            Some(&v) if v > noise => v,
            _ => return Ok(None),
        };
        let rates: Vec<f64> = d
            .iter()
            .enumerate()
            .skip(1)
            .take_while(|(_, &v)| v > noise)
            .map(|(i, &v)| crate::math::powf(v / first, 1.0 / i as f64))
            .collect();
        Ok(rates.into_iter().reduce(f64::max))
    }

    /// Least-squares geometric rate of the depth deltas: `exp` of the
    /// slope of `ln d_k` against `k` over the deltas clear of rounding
    /// noise. `None` when fewer than two deltas qualify.
    pub fn depth_fit_rate(&self, t: f64, kmax: usize) -> Result<Option<f64>> {
        let d = self.depth_deltas(t, kmax)?;
        let noise = 1e-11 * self.g_k(t, kmax)?.norm().max(1.0);
        let (ks, ys): (Vec<f64>, Vec<f64>) =
            d.iter().enumerate().take_while(|(_, &v)| v > noise).map(|(i, &v)| (i as f64, ln(v))).unzip();
        if ks.len() < 2 {
            return Ok(None);
        }
        Ok(Some(exp(crate::dimension::fit_line(&ks, &ys).0)))
    }

    /// `g(t_s)` by the tail bound at `t = tau_K`, `tau_K = t_s` for
    /// bounded itineraries.
    pub fn endpoint(&self, tol: f64) -> Result<Endpoint> {
        let bounded = self.itinerary.is_bounded();
        let t = if bounded { 0.0 } else { self.tau(crate::symbolic::DEFAULT_DEPTH) };
        let mut best = None;
        for k in 1..=DEPTH_CAP {
            let (p, start) = self.g_k_detail(t, k)?;
            let bound = self.tail_bound(t, start);
            best = Some(Endpoint { point: p, t, depth: k, error_bound: bound, evidence_only: !bounded });
            if bound < tol {
                break;
            }
        }
        best.ok_or_else(|| domain("no depth available"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Endpoint {
    pub point: Vec3,
    pub t: f64,
    pub depth: usize,
    pub error_bound: f64,
    /// The parameter `t_s` comes from finitely many entries of an
    /// unbounded itinerary.
    pub evidence_only: bool,
}

/// Sampled hair `g_s` on a parameter grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HairTrace {
    pub itinerary: Itinerary,
    pub params: Vec<f64>,
    pub points: Vec<Vec3>,
    pub depth_used: Vec<usize>,
    pub error_bound: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl HairTrace {
    pub fn from_points(itinerary: Itinerary, pts: &[HairPoint]) -> Self {
        HairTrace {
            itinerary,
            params: pts.iter().map(|p| p.t).collect(),
            points: pts.iter().map(|p| p.point).collect(),
            depth_used: pts.iter().map(|p| p.depth).collect(),
            error_bound: pts.iter().map(|p| p.error_bound).collect(),
            flagged: pts.iter().map(|p| p.flagged).collect(),
        }
    }

    /// Consecutive points further apart than their summed bounds.
    pub fn is_injective(&self) -> bool {
        self.points
            .windows(2)
            .zip(self.error_bound.windows(2))
            .all(|(p, e)| p[0].dist(p[1]) > e[0] + e[1])
    }
}

/// `n` evenly spaced parameters on `[lo, hi]`.
pub fn param_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn trace_hair(s: &Itinerary, t_lo: f64, t_hi: f64, n: usize, tol: f64, cfg: &MapConfig) -> Result<HairTrace> {
    let hair = Hair::new(s.clone(), cfg)?;
    let ts = crate::symbolic::endpoint_param(s, crate::symbolic::DEFAULT_DEPTH).t_s;
    if t_lo < ts - 1e-9 || !(t_hi >= t_lo) {
        return Err(domain("parameter range must start at or above t_s"));
    }
    let pts = param_grid(t_lo, t_hi, n)
        .into_iter()
        .map(|t| hair.point(t, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(HairTrace::from_points(s.clone(), &pts))
}

/// Orbit of `x` with the cells it visits.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrbitItinerary {
    pub prefix: Vec<CellIndex>,
    pub orbit: Vec<Vec3>,
    /// First iterate below `M`.
    pub basin_exit: Option<usize>,
    /// First iterate beyond the exponent guard.
    pub escaped_at: Option<usize>,
}

/// Cells of `x, f(x), ...` while the orbit stays at height `>= M`.
pub fn itinerary_of(x: Vec3, depth: usize, cfg: &MapConfig) -> OrbitItinerary {
    let mut out = OrbitItinerary { prefix: Vec::new(), orbit: Vec::new(), basin_exit: None, escaped_at: None };
    let mut p = x;
    for k in 0..=depth {
        out.orbit.push(p);
        if p.x3 < cfg.high_level {
            out.basin_exit = Some(k);
            return out;
        }
        if p.x3 > EXP_GUARD {
            out.escaped_at = Some(k);
            return out;
        }
        out.prefix.push(cell_of(p.x1, p.x2).0);
        if k < depth {
            p = f_raw(p, cfg.shift);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HairParameter {
    pub prefix: Vec<CellIndex>,
    /// `u_k = E^{-k}(x_{k,3})`.
    pub u: Vec<f64>,
    pub t: f64,
}

/// Hair parameter of a point whose orbit stays above `M`.
pub fn hair_parameter_of(x: Vec3, depth: usize, cfg: &MapConfig) -> Result<HairParameter> {
    let o = itinerary_of(x, depth, cfg);
    if let Some(index) = o.basin_exit {
        return Err(Error::InBasin { index });
    }
    let u: Vec<f64> = o.orbit.iter().enumerate().map(|(k, p)| e_inv_iter(p.x3, k)).collect();
    let t = *u.last().ok_or_else(|| domain("empty orbit"))?;
    Ok(HairParameter { prefix: o.prefix, u, t })
}

/// `f^k(g_s(t))` against `g_{sigma^k s}(E^k t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Residual {
    pub k: usize,
    pub residual: f64,
    pub bound: f64,
}

pub fn conjugacy_residual(s: &Itinerary, t: f64, k: usize, tol: f64, cfg: &MapConfig) -> Result<Residual> {
    let base = Hair::new(s.clone(), cfg)?.point(t, tol)?;
    let mut x = base.point;
    let mut eps = base.error_bound;
    let mut done = 0;
    while done < k {
        if x.x3 + eps > EXP_GUARD || e_iter(t, done + 1).is_err() {
            break;
        }
        let y = f_raw(x, cfg.shift);
        // |Df| <= c2 e^{x3} on the error ball, plus rounding of f
        eps = cfg.deriv_upper * exp(x.x3 + eps) * eps + 4.0 * f64::EPSILON * (y.norm() + cfg.shift);
        x = y;
        done += 1;
    }
    let tk = e_iter(t, done)?;
    let target = Hair::new(s.shift(done), cfg)?.point(tk, tol)?;
    let residual = x.dist(target.point);
    Ok(Residual { k: done, residual, bound: eps + target.error_bound + 1e-13 * x.norm().max(1.0) })
}

/// `x_k = f^k(g_s(t)) = g_{sigma^k s}(E^k t)` evaluated through the
/// conjugacy, which avoids amplifying rounding errors by forward iteration.
pub fn orbit_by_conjugacy(s: &Itinerary, t: f64, k: usize, tol: f64, cfg: &MapConfig) -> Result<Vec<HairPoint>> {
    (0..=k)
        .map(|j| {
            let tj = e_iter(t, j)?;
            Hair::new(s.shift(j), cfg)?.point(tj, tol)
        })
        .collect()
}

/// Orbit of the endpoint `g_s(t_s)` through the endpoints of the shifts.
pub fn endpoint_orbit(s: &Itinerary, k: usize, tol: f64, cfg: &MapConfig) -> Result<Vec<Endpoint>> {
    (0..=k).map(|j| Hair::new(s.shift(j), cfg)?.endpoint(tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::derive_constants;
    use crate::symbolic::GrowthRule;

    fn cfg() -> MapConfig {
        derive_constants(0.5, 128).unwrap()
    }

    #[test]
    fn zero_hair_lies_on_axis() {
        let c = cfg();
        let h = Hair::new(Itinerary::zero(), &c).unwrap();
        let g0 = h.g_k(2.0, 0).unwrap();
        let want = ln(crate::symbolic::e(2.0) + c.high_level + c.shift);
        assert_eq!((g0.x1, g0.x2), (0.0, 0.0));
        assert!((g0.x3 - want).abs() < 1e-14);
        let p = h.point(2.0, 1e-10).unwrap();
        assert!(!p.flagged && p.point.x1 == 0.0);
    }

    #[test]
    fn saturated_start_agrees_with_direct_start() {
        let c = cfg();
        let h = Hair::new(Itinerary::periodic(alloc::vec![CellIndex::ORIGIN, CellIndex::new(2, 0)]).unwrap(), &c)
            .unwrap();
        // E^4(1) is finite, E^5(1) is not
        let (direct, s4) = h.g_k_detail(1.0, 3).unwrap();
        let (sat, s5) = h.g_k_detail(1.0, 9).unwrap();
        assert_eq!((s4, s5), (3, 4));
        assert!(direct.dist(sat) < 1e-12);
    }

    #[test]
    fn constants_are_finite_and_ordered() {
        let c = cfg();
        let k = HairConstants::new(&c);
        assert!(k.c7 > 2.0 && k.c8 > 0.0 && k.c9 > k.c7);
        let g = persistence_gap(&c, 10_000, 1).unwrap();
        assert!(g >= 1.0 && g <= 20.0);
    }

    #[test]
    fn generator_hair_points_meet_tolerance() {
        let c = cfg();
        let s = Itinerary::generator(GrowthRule::Tower { base: 1.0, scale: 0.5 }).unwrap();
        let h = Hair::new(s, &c).unwrap();
        let p = h.point(1.5, 1e-8).unwrap();
        assert!(!p.flagged, "{p:?}");
        assert!(p.depth <= DEPTH_CAP);
    }

    #[test]
    fn odd_start_is_basin_at_once() {
        let c = cfg();
        let o = itinerary_of(Vec3::new(0.0, 0.0, c.high_level), 5, &c);
        assert_eq!(o.basin_exit, Some(1));
        let o = itinerary_of(Vec3::new(2.0, 0.0, 3.0), 5, &c);
        assert_eq!(o.basin_exit, Some(1));
        assert_eq!(o.prefix, alloc::vec![CellIndex::new(1, 0)]);
    }
}
