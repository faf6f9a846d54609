//! Seed charts: straight parameter segments placed deep in the backward
//! orbit, whose forward images sweep out local unstable leaves.
//!
//! A chart lives at `w0 = f^{-n_back}(x)` and parametrises nearby seeds
//! `w0 + t e0` along the unstable direction `e0` at `w0`.  Pushing a seed
//! forward `n_back` times lands on the local leaf through `x`; because
//! backward contraction has already flattened the segment onto the leaf,
//! the image is accurate to `O(lambda^n_back)` plus roundoff.

use super::{robust_direction, GeomError};
use crate::dynamics::{AttractorPoint, BackwardOrbit, HyperbolicSystem, Point, Vec3};

/// Over-coverage factor applied to the requested arc reach, absorbing
/// expansion fluctuation between the two sides of the segment.
const SEED_MARGIN: f64 = 1.6;

/// One pushed seed: its full forward chain, the log expansion factor of
/// each step, and the unit leaf tangent at every level.
pub(crate) struct PushedChain {
    /// `points[k] = f^k(seed)` for `k = 0 ..= n_back`.
    pub points: Vec<Point>,
    /// `log_jac[k]` = log unstable expansion of the step `points[k] -> points[k+1]`.
    pub log_jac: Vec<f64>,
    /// `dirs[k]` = unit (metric) leaf tangent at `points[k]`.
    pub dirs: Vec<Vec3>,
    /// Unit (metric) tangent to the leaf at `points[n_back]`.
    pub tangent: Vec3,
}

pub(crate) struct SeedChart {
    pub w0: Point,
    pub e0: Vec3,
    pub n_back: usize,
    /// Parameter half-range: seeds are taken from `[-half_len, half_len]`.
    pub half_len: f64,
    /// Measured unstable expansion product from the seed stage to the top.
    pub expansion: f64,
}

impl SeedChart {
    /// Builds the chart for the leaf through `x`, sized so that the pushed
    /// segment covers at least `reach` of arc on each side of `x`.
    pub fn build(
        sys: &HyperbolicSystem,
        x: &AttractorPoint,
        n_back: usize,
        reach: f64,
    ) -> Result<Self, GeomError> {
        let pts = sys.backward_points(x, n_back)?;
        let w0 = pts[n_back];

        // Direction at the seed point, from whatever history extends below it.
        let mut deep = Vec::new();
        let mut j = n_back;
        while let Some(p) = x.backward(j) {
            deep.push(*p);
            j += 1;
        }
        if deep.is_empty() {
            deep.push(w0);
        }
        let deep = AttractorPoint::from_history(deep);
        let e0 = robust_direction(sys, &deep)?;

        // Expansion product from the seed stage up to x, measured along the
        // propagated direction.
        let mut e = e0;
        let mut product = 1.0;
        for k in (1..=n_back).rev() {
            let (jac, pushed) = sys.jacobian_along(&pts[k], &e);
            product *= jac;
            e = pushed;
        }

        Ok(SeedChart {
            w0,
            e0,
            n_back,
            half_len: SEED_MARGIN * reach / product,
            expansion: product,
        })
    }

    fn seed(&self, sys: &HyperbolicSystem, t: f64) -> Point {
        sys.offset(&self.w0, &(self.e0 * t))
    }

    /// Forward image of the seed at parameter `t` (top point only).
    pub fn push_point(&self, sys: &HyperbolicSystem, t: f64) -> Point {
        let mut p = self.seed(sys, t);
        for _ in 0..self.n_back {
            p = sys.apply(&p);
        }
        p
    }

    /// Forward image of the seed at parameter `t`, keeping the whole chain
    /// together with per-step log expansions and the final tangent.
    pub fn push_chain(&self, sys: &HyperbolicSystem, t: f64) -> PushedChain {
        let mut points = Vec::with_capacity(self.n_back + 1);
        points.push(self.seed(sys, t));
        let mut log_jac = Vec::with_capacity(self.n_back);
        let mut dirs = Vec::with_capacity(self.n_back + 1);
        let mut e = self.e0;
        dirs.push(e);
        for k in 0..self.n_back {
            let (jac, pushed) = sys.jacobian_along(&points[k], &e);
            log_jac.push(jac.ln());
            e = pushed;
            dirs.push(e);
            let next = sys.apply(&points[k]);
            points.push(next);
        }
        PushedChain {
            points,
            log_jac,
            dirs,
            tangent: e,
        }
    }
}
