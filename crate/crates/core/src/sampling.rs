//! Seeded random streams. Every Monte-Carlo routine takes a `u64` seed and
//! derives independent substreams from it, so results never depend on the
//! order in which batches run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Vec3;

pub type LabRng = ChaCha8Rng;

pub fn rng(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator family keyed by `seed`.
pub fn substream(seed: u64, index: u64) -> LabRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub fn new(lo: Vec3, hi: Vec3) -> Self {
        Aabb { lo, hi }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    pub fn extent(&self) -> Vec3 {
        self.hi - self.lo
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x1 * e.x2 * e.x3
    }

    pub fn diameter(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        self.lo.lerp(self.hi, 0.5)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        Vec3::new(
            uniform(rng, self.lo.x1, self.hi.x1),
            uniform(rng, self.lo.x2, self.hi.x2),
            uniform(rng, self.lo.x3, self.hi.x3),
        )
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (l, h) = (self.lo, self.hi);
        let mut out = [Vec3::ZERO; 8];
        for (k, c) in out.iter_mut().enumerate() {
            *c = Vec3::new(
                if k & 1 == 0 { l.x1 } else { h.x1 },
                if k & 2 == 0 { l.x2 } else { h.x2 },
                if k & 4 == 0 { l.x3 } else { h.x3 },
            );
        }
        out
    }

    /// Uniform point on the surface, faces weighted by area.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let e = self.extent();
        let areas = [e.x2 * e.x3, e.x1 * e.x3, e.x1 * e.x2];
        let total = 2.0 * (areas[0] + areas[1] + areas[2]);
        let mut pick = rng.gen::<f64>() * total;
        let mut p = self.sample(rng);
        for (axis, &area) in areas.iter().enumerate() {
            for side in 0..2 {
                if pick < area || (axis == 2 && side == 1) {
                    let v = if side == 0 { self.lo[axis] } else { self.hi[axis] };
                    match axis {
                        0 => p.x1 = v,
                        1 => p.x2 = v,
                        _ => p.x3 = v,
                    }
                    return p;
                }
                pick -= area;
            }
        }
        p
    }
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.gen::<f64>()
    }
}
