//! Local geometry of unstable leaves.
//!
//! This module turns the raw dynamics into finite geometric objects:
//!
//! * [`LeafSegment`] — an arc-length-parametrised grid of nodes on a local
//!   unstable leaf, produced by [`trace_leaf`].  Each node carries its
//!   backward chain and the log-expansion factors along it, so later
//!   density and energy computations never need to invert the map.
//! * [`bracket`] / [`bracket_point`] — the local product (holonomy) map.
//!   For nearby `p`, `q` it returns the unique point on the local stable
//!   set of `p` that lies on the unstable leaf of `q`.
//! * [`Rectangle`] — a family of leaf segments over a finite stable
//!   transversal, with quotient weights; the discrete stand-in for a
//!   product neighbourhood.  [`Rectangle::stable_projection`] bins points
//!   by the leaf they belong to.

mod bracket;
mod chart;
mod leaf;
mod rectangle;

pub use bracket::{bracket, bracket_closed_form, bracket_point};
pub use leaf::{trace_leaf, LeafSegment};
pub use rectangle::{Rectangle, RectangleSpec, TransversalMode};

use crate::dynamics::{AttractorPoint, BackwardOrbit, DynamicsError, HyperbolicSystem, Point, Vec3};
use thiserror::Error;

/// Errors produced while building leaf segments, brackets or rectangles.
#[derive(Debug, Error)]
pub enum GeomError {
    /// An underlying dynamics query failed.
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    /// The traced polyline doubled back on itself; the requested radius
    /// exceeds the scale on which the leaf is an embedded arc.
    #[error("leaf polyline folds over near vertex {vertex}; requested radius too large")]
    FoldOver { vertex: usize },
    /// A parameter was outside its admissible range.
    #[error("invalid parameter: {0}")]
    BadParameters(String),
    /// The product-structure root finder failed to converge.
    #[error("bracket root finder failed (separation {distance:.3e})")]
    NoBracketConvergence { distance: f64 },
    /// The queried point does not belong to the rectangle.
    #[error("point ({x:.6}, {y:.6}, {z:.6}) lies outside the rectangle")]
    OutsideRectangle { x: f64, y: f64, z: f64 },
}

impl GeomError {
    pub(crate) fn outside(p: &Point) -> Self {
        GeomError::OutsideRectangle {
            x: p.0.x,
            y: p.0.y,
            z: p.0.z,
        }
    }
}

/// Unit unstable direction at `orbit`, using the deepest backward data
/// that is actually available (recorded history first, safe synthesis
/// otherwise).
pub(crate) fn robust_direction(
    sys: &HyperbolicSystem,
    orbit: &AttractorPoint,
) -> Result<Vec3, GeomError> {
    match sys.unstable_direction(orbit, sys.eu_depth()) {
        Ok(v) => Ok(v),
        Err(DynamicsError::InsufficientHistory { .. }) => {
            let depth = orbit
                .depth()
                .max(sys.safe_backward_depth())
                .min(sys.eu_depth());
            Ok(sys.unstable_direction(orbit, depth)?)
        }
        Err(e) => Err(e.into()),
    }
}

/// Distance from `p` to the polyline through `verts` (chordal metric of
/// the system), minimised over all segments.
#[cfg(test)]
pub(crate) fn distance_to_polyline(sys: &HyperbolicSystem, verts: &[Point], p: &Point) -> f64 {
    let mut best = f64::INFINITY;
    for w in verts.windows(2) {
        let a = &w[0];
        let d_ab = sys.displacement(a, &w[1]);
        let d_ap = sys.displacement(a, p);
        let len2 = sys.metric_dot(a, &d_ab, &d_ab);
        let t = if len2 > 0.0 {
            (sys.metric_dot(a, &d_ap, &d_ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let foot = sys.offset(a, &(d_ab * t));
        best = best.min(sys.distance(&foot, p));
    }
    best
}
