//! Hyperbolic automorphisms of the 2-torus.

use super::{fract, DynamicsError, Point};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// An integer 2×2 matrix with `|det| = 1` and real eigenvalues off the
/// unit circle, acting on ℝ²/ℤ².  Exact eigendata is precomputed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToralAutomorphism {
    /// The defining integer matrix, row major.
    pub matrix: [[i64; 2]; 2],
    /// Inverse integer matrix (det ±1 keeps it integral).
    pub inverse: [[i64; 2]; 2],
    /// Expanding eigenvalue (|λ_u| > 1).
    pub lambda_u: f64,
    /// Contracting eigenvalue (|λ_s| < 1).
    pub lambda_s: f64,
    /// Unit eigenvector for `lambda_u` (flat metric).
    pub e_u: Vector2<f64>,
    /// Unit eigenvector for `lambda_s`.
    pub e_s: Vector2<f64>,
}

impl ToralAutomorphism {
    /// Validate the matrix and precompute eigendata.
    pub fn new(m: [[i64; 2]; 2]) -> Result<Self, DynamicsError> {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() != 1 {
            return Err(DynamicsError::InvalidParameter(format!(
                "toral matrix must have determinant ±1, got {det}"
            )));
        }
        let tr = (m[0][0] + m[1][1]) as f64;
        let detf = det as f64;
        let disc = tr * tr - 4.0 * detf;
        if disc <= 0.0 {
            return Err(DynamicsError::InvalidParameter(
                "toral matrix has complex eigenvalues (not hyperbolic)".into(),
            ));
        }
        let sq = disc.sqrt();
        let l1 = (tr + sq) / 2.0;
        let l2 = (tr - sq) / 2.0;
        let (lambda_u, lambda_s) = if l1.abs() > l2.abs() { (l1, l2) } else { (l2, l1) };
        if lambda_u.abs() <= 1.0 + 1e-12 || lambda_s.abs() >= 1.0 - 1e-12 {
            return Err(DynamicsError::InvalidParameter(
                "toral matrix has an eigenvalue on the unit circle (not hyperbolic)".into(),
            ));
        }
        let eigvec = |lam: f64| -> Vector2<f64> {
            // (a-λ)x + b y = 0 row, or the other row if degenerate.
            let a = m[0][0] as f64;
            let b = m[0][1] as f64;
            let c = m[1][0] as f64;
            let d = m[1][1] as f64;
            let v = if b.abs() > 1e-14 || (a - lam).abs() > 1e-14 {
                Vector2::new(b, lam - a)
            } else {
                Vector2::new(lam - d, c)
            };
            v.normalize()
        };
        let inv = [
            [det * m[1][1], -det * m[0][1]],
            [-det * m[1][0], det * m[0][0]],
        ];
        Ok(ToralAutomorphism {
            matrix: m,
            inverse: inv,
            lambda_u,
            lambda_s,
            e_u: eigvec(lambda_u),
            e_s: eigvec(lambda_s),
        })
    }

    fn act(m: &[[i64; 2]; 2], p: &Point) -> Point {
        let x = m[0][0] as f64 * p.0.x + m[0][1] as f64 * p.0.y;
        let y = m[1][0] as f64 * p.0.x + m[1][1] as f64 * p.0.y;
        Point(Vector3::new(fract(x), fract(y), 0.0))
    }

    /// Apply the automorphism.
    pub fn apply(&self, p: &Point) -> Point {
        Self::act(&self.matrix, p)
    }

    /// Apply the inverse automorphism.
    pub fn apply_inverse(&self, p: &Point) -> Point {
        Self::act(&self.inverse, p)
    }

    /// Constant differential, padded to 3×3.
    pub fn differential(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.matrix[0][0] as f64,
            self.matrix[0][1] as f64,
            0.0,
            self.matrix[1][0] as f64,
            self.matrix[1][1] as f64,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Coordinates of a displacement in the (unstable, stable)
    /// eigenbasis.
    pub fn uv_coords(&self, d: &Vector2<f64>) -> (f64, f64) {
        // Solve d = u·e_u + s·e_s.
        let det = self.e_u.x * self.e_s.y - self.e_u.y * self.e_s.x;
        let u = (d.x * self.e_s.y - d.y * self.e_s.x) / det;
        let s = (self.e_u.x * d.y - self.e_u.y * d.x) / det;
        (u, s)
    }

    /// Inverse of [`ToralAutomorphism::uv_coords`].
    pub fn from_uv(&self, u: f64, s: f64) -> Vector2<f64> {
        self.e_u * u + self.e_s * s
    }
}
