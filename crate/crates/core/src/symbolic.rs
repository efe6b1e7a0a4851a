//! The growth function `E(t) = e^t - 1`, itineraries over the even cells,
//! their admissibility and the endpoint parameter `t_s`.

use alloc::vec::Vec;

use crate::error::{domain, Error, Result};
use crate::map::{Branch, CellIndex, EXP_GUARD};
use crate::math::{exp_m1, ln, ln_1p};

/// `E(t) = e^t - 1`.
pub fn e(t: f64) -> f64 {
    exp_m1(t)
}

/// `E^{-1}(u) = log(1 + u)`.
pub fn e_inv(u: f64) -> f64 {
    ln_1p(u)
}

/// `E^k(t)`; fails with the first index whose value would exceed the
/// exponent guard.
pub fn e_iter(t: f64, k: usize) -> Result<f64> {
    let mut v = t;
    for i in 1..=k {
        if v > EXP_GUARD {
            return Err(Error::Overflow { index: i });
        }
        v = exp_m1(v);
    }
    Ok(v)
}

pub fn e_inv_iter(u: f64, k: usize) -> f64 {
    let mut v = u;
    for _ in 0..k {
        v = ln_1p(v);
    }
    v
}

/// `E^0(t), E^1(t), ...` up to `k` or the last representable value.
pub fn e_orbit(t: f64, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k + 1);
    let mut v = t;
    out.push(v);
    for _ in 0..k {
        if v > EXP_GUARD {
            break;
        }
        v = exp_m1(v);
        out.push(v);
    }
    out
}

/// `log E^k(t)`, finite as long as `E^{k-1}(t)` is representable.
pub fn log_e_iter(t: f64, k: usize) -> f64 {
    if k == 0 {
        return ln(t);
    }
    match e_iter(t, k - 1) {
        Ok(prev) if prev > EXP_GUARD => prev + ln_1p(-crate::math::exp(-prev)),
        Ok(prev) => ln(exp_m1(prev)),
        Err(_) => f64::INFINITY,
    }
}

/// Rule for the entries of an itinerary beyond its prefix and periodic
/// data. Entry `k` is the cell `(n, n mod 2)` with `n` given by the rule.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum GrowthRule {
    /// `n_k = ceil(scale * E^k(base))`.
    Tower { base: f64, scale: f64 },
    /// `n_k = step * k`.
    Linear { step: i64 },
}

impl GrowthRule {
    fn validate(&self) -> Result<()> {
        match *self {
            GrowthRule::Tower { base, scale } => {
                if !(base >= 0.0 && base.is_finite() && scale > 0.0 && scale.is_finite()) {
                    return Err(domain("tower rule needs base >= 0 and scale > 0"));
                }
            }
            GrowthRule::Linear { step } => {
                if step.unsigned_abs() > (1 << 20) {
                    return Err(domain("linear step too large"));
                }
            }
        }
        Ok(())
    }

    /// `n_k` as a double, `+inf` once it is not representable.
    fn magnitude(&self, k: u64) -> f64 {
        match *self {
            GrowthRule::Tower { base, scale } => match e_iter(base, k as usize) {
                Ok(v) => crate::math::ceil(scale * v),
                Err(_) => f64::INFINITY,
            },
            GrowthRule::Linear { step } => (step as f64) * (k as f64),
        }
    }

    /// `log n_k`, finite one level further than [`Self::magnitude`].
    fn log_magnitude(&self, k: u64) -> f64 {
        let n = self.magnitude(k);
        if n.is_finite() {
            return if n == 0.0 { f64::NEG_INFINITY } else { ln(n.abs()) };
        }
        match *self {
            GrowthRule::Tower { base, scale } => ln(scale) + log_e_iter(base, k as usize),
            GrowthRule::Linear { .. } => f64::INFINITY,
        }
    }

    fn cell(&self, k: u64) -> Branch {
        let n = self.magnitude(k);
        let odd = n.is_finite() && n % 2.0 != 0.0;
        Branch::new(n, if odd { 1.0 } else { 0.0 })
    }

    /// `E^{-j}(2 |s|)` for the entry at absolute index `k_abs`, following
    /// the tower asymptotically once the entry overflows.
    fn t_value(&self, k_abs: u64, j: usize) -> f64 {
        let b = self.cell(k_abs);
        let norm = b.norm();
        if norm.is_finite() && 2.0 * norm < f64::MAX {
            return e_inv_iter(2.0 * norm, j);
        }
        let GrowthRule::Tower { base, scale } = *self else {
            return f64::INFINITY;
        };
        // largest level of the tower that is still representable
        let orbit = e_orbit(base, k_abs as usize);
        let top = orbit.len() - 1;
        let gap = k_abs as usize - top;
        if gap > j {
            return f64::INFINITY;
        }
        // E^{-1}(2c E^{top+1}(b)) = E^top(b) + log(2c) up to e^{-E^top(b)};
        // further inverse steps only see the tower itself
        let lifted = if gap == 1 { orbit[top] + ln(2.0 * scale) } else { orbit[top] };
        e_inv_iter(lifted, j - gap)
    }
}

/// How an itinerary continues after its prefix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Tail {
    Constant { entry: CellIndex },
    Periodic { cycle: Vec<CellIndex> },
    Generator {
        rule: GrowthRule,
        #[cfg_attr(feature = "serde", serde(default))]
        offset: u64,
    },
}

/// External address `s_0 s_1 s_2 ...` over the even cells.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Itinerary {
    pub prefix: Vec<CellIndex>,
    pub tail: Tail,
}

impl Itinerary {
    pub fn new(prefix: Vec<CellIndex>, tail: Tail) -> Result<Self> {
        let s = Itinerary { prefix, tail };
        s.validate()?;
        Ok(s)
    }

    pub fn zero() -> Self {
        Itinerary::constant(CellIndex::ORIGIN).expect("origin is even")
    }

    pub fn constant(entry: CellIndex) -> Result<Self> {
        Itinerary::new(Vec::new(), Tail::Constant { entry })
    }

    pub fn periodic(cycle: Vec<CellIndex>) -> Result<Self> {
        Itinerary::new(Vec::new(), Tail::Periodic { cycle })
    }

    pub fn generator(rule: GrowthRule) -> Result<Self> {
        Itinerary::new(Vec::new(), Tail::Generator { rule, offset: 0 })
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |c: &CellIndex| !c.is_even();
        if self.prefix.iter().any(odd) {
            return Err(domain("itinerary entries must have even parity"));
        }
        match &self.tail {
            Tail::Constant { entry } if odd(entry) => Err(domain("itinerary entries must have even parity")),
            Tail::Periodic { cycle } if cycle.is_empty() => Err(domain("periodic tail needs a non-empty cycle")),
            Tail::Periodic { cycle } if cycle.iter().any(odd) => {
                Err(domain("itinerary entries must have even parity"))
            }
            Tail::Generator { rule, .. } => rule.validate(),
            _ => Ok(()),
        }
    }

    /// True when `|s_k|` is bounded.
    pub fn is_bounded(&self) -> bool {
        !matches!(self.tail, Tail::Generator { .. })
    }

    /// Entry `k` as doubles; `None` when it cannot be represented.
    pub fn branch_at(&self, k: usize) -> Option<Branch> {
        if let Some(c) = self.prefix.get(k) {
            return Some(c.branch());
        }
        let j = k - self.prefix.len();
        match &self.tail {
            Tail::Constant { entry } => Some(entry.branch()),
            Tail::Periodic { cycle } => Some(cycle[j % cycle.len()].branch()),
            Tail::Generator { rule, offset } => {
                let b = rule.cell(j as u64 + offset);
                b.r1.is_finite().then_some(b)
            }
        }
    }

    /// Entry `k` when it fits in `i64`.
    pub fn cell_at(&self, k: usize) -> Option<CellIndex> {
        let b = self.branch_at(k)?;
        let lim = (1u64 << 62) as f64;
        (b.r1.abs() < lim && b.r2.abs() < lim).then(|| CellIndex::new(b.r1 as i64, b.r2 as i64))
    }

    /// `|s_k|`, `+inf` when not representable.
    pub fn norm_at(&self, k: usize) -> f64 {
        self.branch_at(k).map_or(f64::INFINITY, |b| b.norm())
    }

    /// `log |s_k|`; `-inf` for the origin.
    pub fn log_norm_at(&self, k: usize) -> f64 {
        if k >= self.prefix.len() {
            if let Tail::Generator { rule, offset } = &self.tail {
                let j = (k - self.prefix.len()) as u64 + offset;
                let b = rule.cell(j);
                if !b.r1.is_finite() {
                    return rule.log_magnitude(j);
                }
            }
        }
        let n = self.norm_at(k);
        if n == 0.0 {
            f64::NEG_INFINITY
        } else {
            ln(n)
        }
    }

    /// `sigma^k(s)`.
    pub fn shift(&self, k: usize) -> Itinerary {
        if k <= self.prefix.len() {
            return Itinerary { prefix: self.prefix[k..].to_vec(), tail: self.tail.clone() };
        }
        let j = k - self.prefix.len();
        let tail = match &self.tail {
            Tail::Constant { entry } => Tail::Constant { entry: *entry },
            Tail::Periodic { cycle } => {
                let n = cycle.len();
                Tail::Periodic { cycle: (0..n).map(|i| cycle[(i + j) % n]).collect() }
            }
            Tail::Generator { rule, offset } => Tail::Generator { rule: *rule, offset: offset + j as u64 },
        };
        Itinerary { prefix: Vec::new(), tail }
    }

    /// First `n` entries that fit in `i64`.
    pub fn entries(&self, n: usize) -> Vec<CellIndex> {
        (0..n).map_while(|k| self.cell_at(k)).collect()
    }
}

/// `t_k` with `2|s_k| = E^k(t_k)`.
pub fn t_k_of(s: &Itinerary, k: usize) -> f64 {
    if k >= s.prefix.len() {
        if let Tail::Generator { rule, offset } = &s.tail {
            return rule.t_value((k - s.prefix.len()) as u64 + offset, k);
        }
    }
    e_inv_iter(2.0 * s.norm_at(k), k)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EndpointParam {
    /// Estimate of `t_s = limsup t_k`.
    pub t_s: f64,
    /// `tau_k = max_{k <= j <= K} t_j` for `k = 0..=K`.
    pub tau: Vec<f64>,
    /// Smallest `t_j` over the second half of the range.
    pub lower: f64,
    /// `tau` at the middle of the range.
    pub upper: f64,
    pub converged: bool,
    /// Some `t_k` could not be evaluated.
    pub partial: bool,
}

pub const DEFAULT_DEPTH: usize = 40;

/// Endpoint parameter of `s` from `t_0 .. t_K`.
pub fn endpoint_param(s: &Itinerary, depth: usize) -> EndpointParam {
    let depth = depth.max(1);
    let t: Vec<f64> = (0..=depth).map(|k| t_k_of(s, k)).collect();
    let partial = t.iter().any(|v| !v.is_finite());
    let mut tau = t.clone();
    for k in (0..depth).rev() {
        tau[k] = tau[k].max(tau[k + 1]);
    }
    if s.is_bounded() {
        return EndpointParam { t_s: 0.0, tau, lower: 0.0, upper: 0.0, converged: true, partial: false };
    }
    let half = depth / 2;
    let lower = t[half..].iter().copied().fold(f64::INFINITY, f64::min);
    let upper = tau[half];
    let converged = !partial && tau[depth - 1] - tau[depth] < 1e-9;
    EndpointParam { t_s: tau[depth], tau, lower, upper, converged, partial }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Admissibility {
    pub admissible: bool,
    /// `log(|s_k| / E^k(t))`, `-inf` for zero entries.
    pub log_ratios: Vec<f64>,
    pub sup_log_ratio: f64,
    /// Verdict rests on finitely many entries of an unbounded tail.
    pub evidence_only: bool,
}

/// Checks `limsup |s_k| / E^k(t) < inf` over `k <= depth`.
pub fn is_admissible(s: &Itinerary, t_probe: f64, depth: usize) -> Result<Admissibility> {
    if depth < 3 {
        return Err(domain("admissibility needs depth >= 3"));
    }
    if !(t_probe > 0.0) {
        return Err(domain("probe parameter must be positive"));
    }
    let mut log_ratios = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let num = s.log_norm_at(k);
        let den = log_e_iter(t_probe, k);
        let r = if num == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else if num.is_finite() && den.is_finite() {
            num - den
        } else {
            // both towers past the representable range: compare parameters
            let tk = t_k_of(s, k);
            if tk < t_probe {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        };
        log_ratios.push(r);
    }
    let sup = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half = depth / 2;
    let early = log_ratios[..=half].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let late = log_ratios[half..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let admissible = late.is_finite() && late <= early.max(0.0) + 1.0 || late == f64::NEG_INFINITY;
    Ok(Admissibility { admissible, log_ratios, sup_log_ratio: sup, evidence_only: !s.is_bounded() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const TWO_ZERO: CellIndex = CellIndex::new(2, 0);

    #[test]
    fn e_values() {
        assert_eq!(e(0.0), 0.0);
        assert!((e(1.0) - 1.718281828459045).abs() < 1e-15);
        let oracle = libm::expm1(core::f64::consts::E - 1.0);
        assert!((e_iter(1.0, 2).unwrap() - oracle).abs() < 1e-14);
        assert!((oracle - 4.574_941_524_760_88).abs() < 1e-12);
        assert!(matches!(e_iter(1.0, 10), Err(Error::Overflow { index: 5 })));
        for i in 0..=300 {
            let t = i as f64 * 0.1;
            assert!((e_inv(e(t)) - t).abs() <= 1e-12 * t.max(1.0));
        }
    }

    #[test]
    fn t_k_of_constant() {
        let s = Itinerary::constant(TWO_ZERO).unwrap();
        assert_eq!(t_k_of(&s, 0), 4.0);
        assert!((t_k_of(&s, 1) - ln(5.0)).abs() < 1e-15);
        for k in 1..40 {
            assert!(t_k_of(&s, k + 1) < t_k_of(&s, k));
        }
    }

    #[test]
    fn endpoint_of_bounded_and_generator() {
        let p = Itinerary::periodic(vec![CellIndex::ORIGIN, TWO_ZERO]).unwrap();
        let ep = endpoint_param(&p, 60);
        assert_eq!(ep.t_s, 0.0);
        // the sequence itself tends to 0
        assert!(t_k_of(&p, 60) < 0.05);
        let g = Itinerary::generator(GrowthRule::Tower { base: 1.0, scale: 0.5 }).unwrap();
        let ep = endpoint_param(&g, 8);
        assert!((ep.t_s - 1.0).abs() < 1e-6, "{ep:?}");
        assert!(ep.tau.windows(2).all(|w| w[0] >= w[1]));
        assert!(ep.lower <= ep.t_s && ep.t_s <= ep.upper);
        let ep = endpoint_param(&g, DEFAULT_DEPTH);
        assert!(ep.converged && !ep.partial);
        assert!((ep.t_s - 1.0).abs() < 1e-9);
        assert_eq!(endpoint_param(&Itinerary::zero(), 10).t_s, 0.0);
    }

    #[test]
    fn admissibility() {
        let p = Itinerary::constant(TWO_ZERO).unwrap();
        let a = is_admissible(&p, 1.0, 10).unwrap();
        assert!(a.admissible && !a.evidence_only);
        assert!(a.log_ratios[4] < -50.0);
        let z = is_admissible(&Itinerary::zero(), 0.01, 10).unwrap();
        assert!(z.admissible);
        let g = Itinerary::generator(GrowthRule::Tower { base: 2.0, scale: 1.0 }).unwrap();
        let a = is_admissible(&g, 1.0, 10).unwrap();
        assert!(!a.admissible);
        assert!(a.log_ratios[3] > 10.0);
        let a = is_admissible(&g, 2.5, 10).unwrap();
        assert!(a.admissible && a.evidence_only);
        assert!(is_admissible(&g, 1.0, 2).is_err());
    }

    #[test]
    fn shift_rules() {
        let p = Itinerary::periodic(vec![CellIndex::ORIGIN, TWO_ZERO]).unwrap();
        assert_eq!(p.shift(1), Itinerary::periodic(vec![TWO_ZERO, CellIndex::ORIGIN]).unwrap());
        assert_eq!(p.shift(0), p);
        let g = Itinerary::new(vec![TWO_ZERO], Tail::Generator { rule: GrowthRule::Linear { step: 3 }, offset: 0 })
            .unwrap();
        let h = g.shift(3);
        for k in 0..10 {
            assert_eq!(h.cell_at(k), g.cell_at(k + 3));
        }
    }

    #[test]
    fn shift_conjugates_parameters() {
        let g = Itinerary::generator(GrowthRule::Tower { base: 0.7, scale: 3.0 }).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let lhs = e_iter(t_k_of(&g, j + k), k).unwrap();
                let rhs = t_k_of(&g.shift(k), j);
                assert!((lhs - rhs).abs() < 1e-9 * rhs.max(1.0), "{k} {j} {lhs} {rhs}");
            }
        }
    }

    #[test]
    fn parity_enforced() {
        assert!(Itinerary::constant(CellIndex::new(1, 0)).is_err());
        assert!(Itinerary::periodic(vec![]).is_err());
        let g = Itinerary::generator(GrowthRule::Linear { step: 1 }).unwrap();
        assert!((0..20).all(|k| g.cell_at(k).unwrap().is_even()));
    }

    #[test]
    fn huge_entries_stay_addressable() {
        let g = Itinerary::generator(GrowthRule::Tower { base: 1.0, scale: 0.5 }).unwrap();
        assert!(g.cell_at(4).is_none());
        assert!(g.branch_at(4).is_some());
        assert!(g.branch_at(5).is_none());
        let l = g.log_norm_at(5);
        assert!((l - (ln(0.5) + e_iter(1.0, 4).unwrap())).abs() < 1e-6 * l);
    }
}
