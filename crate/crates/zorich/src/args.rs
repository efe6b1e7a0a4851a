//! Text forms of ranges, planes and windows used on the command line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use zorich_core::Vec3;

/// `lo:hi:n`, `n` evenly spaced values including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl ParamRange {
    pub fn values(&self) -> Vec<f64> {
        zorich_core::hairs::param_grid(self.lo, self.hi, self.n)
    }
}

impl FromStr for ParamRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:n, got {s:?}"));
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| format!("bad lower end {:?}", parts[0]))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| format!("bad upper end {:?}", parts[1]))?;
        let n: usize = parts[2].trim().parse().map_err(|_| format!("bad count {:?}", parts[2]))?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err("need finite lo <= hi".into());
        }
        if n == 0 || (n == 1 && lo != hi) {
            return Err("need n >= 2 (or n = 1 with lo = hi)".into());
        }
        Ok(ParamRange { lo, hi, n })
    }
}

impl fmt::Display for ParamRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.n)
    }
}

/// Axis-aligned plane `x_axis = value`, axis in `0..3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub axis: usize,
    pub value: f64,
}

impl Plane {
    /// The two free axes in increasing order.
    pub fn free_axes(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    /// Point of the plane with free coordinates `(u, v)`.
    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        let mut c = [0.0; 3];
        c[self.axis] = self.value;
        let [i, j] = self.free_axes();
        c[i] = u;
        c[j] = v;
        Vec3::from_array(c)
    }
}

impl FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lhs, rhs) = s.split_once('=').ok_or_else(|| format!("expected x<i>=<value>, got {s:?}"))?;
        let axis = match lhs.trim() {
            "x1" => 0,
            "x2" => 1,
            "x3" => 2,
            other => return Err(format!("unknown axis {other:?}")),
        };
        let value: f64 = rhs.trim().parse().map_err(|_| format!("bad plane value {rhs:?}"))?;
        if !value.is_finite() {
            return Err("plane value must be finite".into());
        }
        Ok(Plane { axis, value })
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}={}", self.axis + 1, self.value)
    }
}

/// Comma-separated `lo:hi` intervals, one per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window(pub Vec<(f64, f64)>);

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        for part in s.split(',') {
            let (a, b) = part.split_once(':').ok_or_else(|| format!("expected lo:hi, got {part:?}"))?;
            let lo: f64 = a.trim().parse().map_err(|_| format!("bad bound {a:?}"))?;
            let hi: f64 = b.trim().parse().map_err(|_| format!("bad bound {b:?}"))?;
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(format!("empty interval {part:?}"));
            }
            out.push((lo, hi));
        }
        if !(2..=3).contains(&out.len()) {
            return Err("a window has two or three intervals".into());
        }
        Ok(Window(out))
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        write!(f, "{}", parts.join(","))
    }
}
