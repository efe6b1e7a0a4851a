//! Small fixed-size vector and matrix types.

use core::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use crate::math::sqrt;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vec3 {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const E3: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x1: f64, x2: f64, x3: f64) -> Self {
        Vec3 { x1, x2, x3 }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x1 * o.x1 + self.x2 * o.x2 + self.x3 * o.x3
    }

    pub fn norm(self) -> f64 {
        // scaled to stay finite for coordinates near f64::MAX
        let s = self.x1.abs().max(self.x2.abs()).max(self.x3.abs());
        if s == 0.0 || !s.is_finite() {
            return s;
        }
        let (a, b, c) = (self.x1 / s, self.x2 / s, self.x3 / s);
        s * sqrt(a * a + b * b + c * c)
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x1 * s, self.x2 * s, self.x3 * s)
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self).scale(t)
    }

    pub fn horizontal_norm(self) -> f64 {
        crate::math::hypot(self.x1, self.x2)
    }

    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x1 + o.x1, self.x2 + o.x2, self.x3 + o.x3)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x1 - o.x1, self.x2 - o.x2, self.x3 - o.x3)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x1, -self.x2, -self.x3)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x1,
            1 => &self.x2,
            2 => &self.x3,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3([
            [c0.x1, c1.x1, c2.x1],
            [c0.x2, c1.x2, c2.x2],
            [c0.x3, c1.x3, c2.x3],
        ])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x1 + m[0][1] * v.x2 + m[0][2] * v.x3,
            m[1][0] * v.x1 + m[1][1] * v.x2 + m[1][2] * v.x3,
            m[2][0] * v.x1 + m[2][1] * v.x2 + m[2][2] * v.x3,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = self.0;
        for row in out.iter_mut() {
            for c in row.iter_mut() {
                *c *= s;
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let inv = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        Some(Mat3(inv).scale(1.0 / d))
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> [f64; 3] {
        let ata = self.transpose().mul_mat(self);
        let mut ev = symmetric_eigenvalues(ata);
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
        [sqrt(ev[0].max(0.0)), sqrt(ev[1].max(0.0)), sqrt(ev[2].max(0.0))]
    }

    /// Operator norm `|A|`.
    pub fn op_norm(&self) -> f64 {
        self.singular_values()[0]
    }

    /// Minimal stretch `l(A) = min |Av|` over unit `v`.
    pub fn min_stretch(&self) -> f64 {
        self.singular_values()[2]
    }
}

/// Cyclic Jacobi rotations on a symmetric 3x3 matrix.
fn symmetric_eigenvalues(m: Mat3) -> [f64; 3] {
    let mut a = m.0;
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-36 * diag || off == 0.0 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / sqrt(t * t + 1.0);
            let s = t * c;
            let mut j = [[0.0; 3]; 3];
            for (i, row) in j.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            j[p][p] = c;
            j[q][q] = c;
            j[p][q] = s;
            j[q][p] = -s;
            let jm = Mat3(j);
            a = jm.transpose().mul_mat(&Mat3(a)).mul_mat(&jm).0;
        }
    }
    [a[0][0], a[1][1], a[2][2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_values_of_diagonal() {
        let m = Mat3([[3.0, 0.0, 0.0], [0.0, -0.5, 0.0], [0.0, 0.0, 2.0]]);
        let sv = m.singular_values();
        assert!((sv[0] - 3.0).abs() < 1e-14);
        assert!((sv[1] - 2.0).abs() < 1e-14);
        assert!((sv[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn singular_values_match_rotated_scaling() {
        // R * diag(4, 1, 0.25), R a rotation about x3 by 0.3 rad
        let (c, s) = (crate::math::cos(0.3), crate::math::sin(0.3));
        let r = Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        let d = Mat3([[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.25]]);
        let sv = r.mul_mat(&d).mul_mat(&r.transpose()).singular_values();
        assert!((sv[0] - 4.0).abs() < 1e-12);
        assert!((sv[2] - 0.25).abs() < 1e-12);
        assert!((r.mul_mat(&d).det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = Mat3([[2.0, 1.0, 0.0], [0.5, 3.0, -1.0], [0.0, 0.25, 1.5]]);
        let p = m.mul_mat(&m.inverse().unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p.0[i][j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn norm_survives_huge_coordinates() {
        let v = Vec3::new(1e300, 1e300, 0.0);
        assert!((v.norm() / 1e300 - core::f64::consts::SQRT_2).abs() < 1e-15);
    }
}
