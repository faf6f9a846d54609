//! Derived-from-Anosov surgery of the cat map.
//!
//! Start from the `[[2,1],[1,1]]` toral automorphism and make its
//! fixed point at the origin repelling: compose with the time-τ map of
//! the vector field that, in the orthonormal eigenbasis `(e_u, e_s)`
//! centred at the origin, reads `α̇₁ = 0, α̇₂ = α₂ · h(|α|)`, where `h`
//! is a monotone cutoff with `h ≡ 1` on `[0, r0/2]` and `h ≡ 0` outside
//! `[0, r0)`.  The field vanishes outside the ball of radius `r0`, so
//! the surgery map is the identity there and the composition is a
//! global diffeomorphism of the torus.  With `e^τ λ_s > 1` the origin
//! becomes a repeller and the nonwandering dynamics away from its
//! basin is a genuine one-dimensionally-unstable attractor.
//!
//! The flow has no elementary closed form for a polynomial cutoff, so
//! it is realised numerically: since `α₁` is constant along orbits, the
//! system is a family of scalar autonomous ODEs, integrated by an
//! implicit-midpoint scheme inside a fourth-order symmetric (Yoshida)
//! composition.  Symmetry makes the backward flow the exact inverse of
//! the forward flow step by step, so `apply_inverse ∘ apply` returns to
//! the start to round-off — much tighter than the global accuracy of
//! the flow itself.  The reported differential is the exact derivative
//! of the implemented (numerical) flow, obtained by differentiating
//! each midpoint step in closed form.

use super::{fract, wrapped_diff, DynamicsError, Point};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Outer composition steps for the time-τ flow.
const FLOW_STEPS: usize = 128;

/// Absolute convergence tolerance of the per-substep implicit solve
/// (state values are bounded by r0 < 1).
const SOLVE_TOL: f64 = 1e-16;

/// The surgered cat map `F = φ^τ ∘ f_A`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DaMap {
    /// Radius of the surgery ball around the origin.
    pub r0: f64,
    /// Flow time; `e^τ λ_s` is the repelling rate at the origin along
    /// the formerly stable direction.
    pub tau: f64,
    lambda_u: f64,
    lambda_s: f64,
    e_u: Vector2<f64>,
    e_s: Vector2<f64>,
}

impl DaMap {
    /// Validate parameters.  `r0` must keep the surgery ball well
    /// inside one fundamental domain of the torus; `τ` must make the
    /// origin actually repelling (`e^τ λ_s > 1`).
    pub fn new(r0: f64, tau: f64) -> Result<Self, DynamicsError> {
        if !(r0 > 0.0 && r0 <= 0.2) {
            return Err(DynamicsError::InvalidParameter(format!(
                "surgery radius r0 must lie in (0, 0.2], got {r0}"
            )));
        }
        let s5 = 5.0f64.sqrt();
        let lambda_u = (3.0 + s5) / 2.0;
        let lambda_s = (3.0 - s5) / 2.0;
        let tau_min = lambda_u.ln(); // e^τ λ_s > 1  ⇔  τ > ln λ_u
        if !(tau > tau_min && tau <= 5.0) {
            return Err(DynamicsError::InvalidParameter(format!(
                "flow time tau must lie in (ln λ_u, 5] = ({tau_min:.6}, 5], got {tau}"
            )));
        }
        let phi = (1.0 + s5) / 2.0;
        let norm = (1.0 + phi * phi).sqrt();
        Ok(DaMap {
            r0,
            tau,
            lambda_u,
            lambda_s,
            e_u: Vector2::new(phi / norm, 1.0 / norm),
            e_s: Vector2::new(-1.0 / norm, phi / norm),
        })
    }

    /// Cutoff profile: 1 on `[0, r0/2]`, cubic-smoothstep descent to 0
    /// at `r0`, 0 beyond (C¹ everywhere).
    fn bump(&self, s: f64) -> f64 {
        let half = self.r0 / 2.0;
        if s <= half {
            1.0
        } else if s >= self.r0 {
            0.0
        } else {
            let t = (s - half) / half;
            1.0 - t * t * (3.0 - 2.0 * t)
        }
    }

    /// Derivative of the cutoff profile.
    fn bump_prime(&self, s: f64) -> f64 {
        let half = self.r0 / 2.0;
        if s <= half || s >= self.r0 {
            0.0
        } else {
            let t = (s - half) / half;
            -(6.0 * t - 6.0 * t * t) / half
        }
    }

    /// Scalar field `g(m; c) = m · h(√(c² + m²))` and its partial
    /// derivatives `(g, ∂g/∂m, ∂g/∂c)`.
    fn field(&self, m: f64, c: f64) -> (f64, f64, f64) {
        let s = (c * c + m * m).sqrt();
        let h = self.bump(s);
        if s == 0.0 {
            return (0.0, h, 0.0);
        }
        let hp = self.bump_prime(s);
        (m * h, h + m * m / s * hp, m * c / s * hp)
    }

    /// One implicit-midpoint substep of size `h`: solves
    /// `x = u + h·g((u+x)/2; c)` and returns `(x, a, b)` where the
    /// differentiated update is `dx = a·du + b·dc`.
    fn midpoint_step(&self, u: f64, c: f64, h: f64) -> (f64, f64, f64) {
        let (g0, _, _) = self.field(u, c);
        let mut x = u + h * g0;
        for _ in 0..100 {
            let (g, _, _) = self.field(0.5 * (u + x), c);
            let xn = u + h * g;
            let done = (xn - x).abs() <= SOLVE_TOL;
            x = xn;
            if done {
                break;
            }
        }
        let (_, gm, gc) = self.field(0.5 * (u + x), c);
        let denom = 1.0 - 0.5 * h * gm;
        ((x), (1.0 + 0.5 * h * gm) / denom, h * gc / denom)
    }

    /// Flow the scalar coordinate for `time` (of either sign) and
    /// accumulate the Jacobian entries `(∂U/∂u, ∂U/∂c)` of the
    /// numerical flow.  The palindromic substep pattern makes the
    /// time-reversed flow the exact step-by-step inverse.
    fn flow_scalar(&self, c: f64, u0: f64, time: f64) -> (f64, f64, f64) {
        let w1 = 1.0 / (2.0 - 2.0f64.cbrt());
        let w0 = 1.0 - 2.0 * w1;
        let h = time / FLOW_STEPS as f64;
        let mut u = u0;
        let mut ju = 1.0;
        let mut jc = 0.0;
        for _ in 0..FLOW_STEPS {
            for w in [w1, w0, w1] {
                let (un, a, b) = self.midpoint_step(u, c, w * h);
                u = un;
                ju *= a;
                jc = a * jc + b;
            }
        }
        (u, ju, jc)
    }

    /// Displacement of a torus point from the origin, shortest
    /// representative.
    fn disp(p: &Point) -> Vector2<f64> {
        Vector2::new(wrapped_diff(p.0.x, 1.0), wrapped_diff(p.0.y, 1.0))
    }

    /// Eigenbasis coordinates `(c, u) = (α₁, α₂)` of a displacement.
    fn eig_coords(&self, d: &Vector2<f64>) -> (f64, f64) {
        (d.dot(&self.e_u), d.dot(&self.e_s))
    }

    /// Apply the surgery flow (`dir = ±1` for forward/backward time).
    fn flow_point(&self, q: &Point, dir: f64) -> Point {
        let d = Self::disp(q);
        let (c, u) = self.eig_coords(&d);
        if c * c + u * u >= self.r0 * self.r0 || u == 0.0 {
            return *q;
        }
        let (u2, _, _) = self.flow_scalar(c, u, dir * self.tau);
        let d2 = self.e_u * c + self.e_s * u2;
        Point(Vector3::new(fract(d2.x), fract(d2.y), 0.0))
    }

    /// Jacobian of the surgery flow at `q` in standard coordinates.
    fn flow_jacobian2(&self, q: &Point, dir: f64) -> Matrix2<f64> {
        let d = Self::disp(q);
        let (c, u) = self.eig_coords(&d);
        if c * c + u * u >= self.r0 * self.r0 {
            return Matrix2::identity();
        }
        let (_, ju, jc) = self.flow_scalar(c, u, dir * self.tau);
        let j_eig = Matrix2::new(1.0, 0.0, jc, ju);
        let basis = Matrix2::new(self.e_u.x, self.e_s.x, self.e_u.y, self.e_s.y);
        basis * j_eig * basis.transpose()
    }

    fn cat_apply(p: &Point) -> Point {
        Point(Vector3::new(
            fract(2.0 * p.0.x + p.0.y),
            fract(p.0.x + p.0.y),
            0.0,
        ))
    }

    fn cat_apply_inverse(p: &Point) -> Point {
        Point(Vector3::new(
            fract(p.0.x - p.0.y),
            fract(-p.0.x + 2.0 * p.0.y),
            0.0,
        ))
    }

    /// `F = φ^τ ∘ f_A`.
    pub fn apply(&self, p: &Point) -> Point {
        self.flow_point(&Self::cat_apply(p), 1.0)
    }

    /// `F^{-1} = f_A^{-1} ∘ φ^{-τ}`.
    pub fn apply_inverse(&self, p: &Point) -> Point {
        Self::cat_apply_inverse(&self.flow_point(p, -1.0))
    }

    /// Differential `DF(p) = Dφ^τ(f_A p) · A`, padded to 3×3.
    pub fn differential(&self, p: &Point) -> Matrix3<f64> {
        let q = Self::cat_apply(p);
        let dphi = self.flow_jacobian2(&q, 1.0);
        let a = Matrix2::new(2.0, 1.0, 1.0, 1.0);
        let m = dphi * a;
        Matrix3::new(
            m[(0, 0)],
            m[(0, 1)],
            0.0,
            m[(1, 0)],
            m[(1, 1)],
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}
