//! Composition of node functions with powers of the map, and the
//! energy-rescaling identities the recorded expansion chains certify.

use serde::{Deserialize, Serialize};

use super::grid::{assemble, gradient_on, Layout};
use super::heat::{heat, HeatOperator};
use super::DirichletError;
use crate::dynamics::{AttractorPoint, BackwardOrbit, HyperbolicSystem, Point};
use crate::leafgeom::{GeomError, Rectangle};
use crate::srb::SrbTable;

/// Evaluates `φ∘fⁿ` on the rectangle's nodes: each node is carried `n`
/// steps (backwards along its recorded chain when `n < 0`, forwards by
/// the map when `n > 0`), binned to its leaf, and `φ` is read off by
/// within-leaf linear interpolation.
///
/// Every image must land inside the rectangle; the first escaping node
/// is reported.  Backward orders are limited by the recorded chain
/// depth.
pub fn pullback(
    sys: &HyperbolicSystem,
    rect: &Rectangle,
    phi: &[f64],
    n: i64,
) -> Result<Vec<f64>, DirichletError> {
    let layout = Layout::of(rect);
    layout.check_len(phi)?;
    if n == 0 {
        return Ok(phi.to_vec());
    }
    let mut out = Vec::with_capacity(layout.total());
    for j in 0..rect.leaf_count() {
        let leaf = rect.leaf(j);
        for i in 0..leaf.node_count() {
            let node = layout.global(j, i);
            let q = if n < 0 {
                let k = (-n) as usize;
                let avail = leaf.backward_depth();
                if k > avail {
                    return Err(DirichletError::DepthTooShallow {
                        needed: k,
                        available: avail,
                    });
                }
                // The k-th preimage, keeping the deeper tail of the
                // chain as its own history.
                let hist: Vec<Point> = (k..=avail)
                    .map(|d| *leaf.backward_node(i, d).unwrap())
                    .collect();
                AttractorPoint::from_history(hist)
            } else {
                let steps = n as usize;
                let mut orbit = leaf.node_orbit(i);
                let window = orbit.depth() + steps + 1;
                orbit.advance(sys, steps, window);
                orbit
            };
            let (lj, s) = rect.locate(sys, &q).map_err(|e| match e {
                GeomError::OutsideRectangle { .. } | GeomError::BadParameters(_) => {
                    let p = q.point();
                    DirichletError::Uncovered {
                        node,
                        x: p.0.x,
                        y: p.0.y,
                        z: p.0.z,
                    }
                }
                other => DirichletError::Geometry(other),
            })?;
            out.push(interp_on_leaf(&layout, phi, lj, s));
        }
    }
    Ok(out)
}

/// Linear interpolation of a node function along one leaf.  `locate`
/// has already confirmed the arc is in range up to its boundary slack,
/// so a clamp suffices at the ends.
fn interp_on_leaf(layout: &Layout, phi: &[f64], j: usize, s: f64) -> f64 {
    let m = layout.size(j);
    if m == 1 {
        return phi[layout.global(j, 0)];
    }
    let h = layout.spacing();
    let start = layout.arc(j, 0);
    let sc = s.clamp(start, layout.arc(j, m - 1));
    let idx = (((sc - start) / h).floor() as usize).min(m - 2);
    let alpha = (sc - (start + idx as f64 * h)) / h;
    let a = phi[layout.global(j, idx)];
    let b = phi[layout.global(j, idx + 1)];
    a + alpha * (b - a)
}

/// How the energy of `φ∘fⁿ` relates to the energy of `φ`, certified by
/// the expansion recorded along each node's backward chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiInvarianceReport {
    /// The power of the map the report is about.
    pub order: u32,
    /// The assembled energy `E(φ)`.
    pub energy: f64,
    /// The same energy through the gradient quadrature, `Σ m Γ(φ)` —
    /// the untilted counterpart of `weighted_integral`.
    pub nodal_energy: f64,
    /// `Σ m w² Γ(φ)` with `w` the leafwise expansion of `fⁿ` along the
    /// chain ending at each node: the energy `φ∘fⁿ` carries, expressed
    /// over the original grid by the change of variables the invariant
    /// measure provides.
    pub weighted_integral: f64,
    /// `weighted_integral / nodal_energy`; exactly one for constants
    /// and at order zero.
    pub ratio: f64,
    /// Smallest single-step expansion factor seen on any chain.
    pub a_min: f64,
    /// Largest single-step expansion factor seen on any chain.
    pub a_max: f64,
    /// The single expansion constant, when the observed factors
    /// collapse to one value; `None` at order zero or when the
    /// expansion genuinely varies along the leaves.
    pub conformal: Option<f64>,
    /// `sup |e^{-t a^{2n} L} φ − P_{a^{2n} t} φ|` at `t ≈ 1/(a^{2n}θ₁)`:
    /// the semigroup of the rescaled form against the time-rescaled
    /// semigroup.  Only meaningful alongside `conformal`.
    pub spectral_defect: Option<f64>,
}

/// Certifies, over one rectangle, how composition with `fⁿ` rescales
/// the energy: the tilted integral `Σ m w² Γ(φ)` is sandwiched between
/// `a_min^{2n}` and `a_max^{2n}` times its untilted counterpart, and
/// when every recorded factor agrees (a single expansion constant `a`)
/// the rescaling is the exact multiple `a^{2n}`, which the semigroup
/// inherits as a time change.
pub fn quasi_invariance_report(
    sys: &HyperbolicSystem,
    rect: &Rectangle,
    table: &SrbTable,
    phi: &[f64],
    n: u32,
) -> Result<QuasiInvarianceReport, DirichletError> {
    if sys.conformal_constant().is_none() {
        return Err(DirichletError::NotConformal { system: sys.name() });
    }
    let steps = n as usize;
    let (form, measure) = assemble(rect, table)?;
    let layout = measure.layout().clone();
    layout.check_len(phi)?;

    let energy = form.energy(phi);
    let grad = gradient_on(&layout, phi)?;

    let mut a_min = f64::INFINITY;
    let mut a_max = f64::NEG_INFINITY;
    let mut weighted_integral = 0.0;
    let mut nodal_energy = 0.0;
    for j in 0..rect.leaf_count() {
        let leaf = rect.leaf(j);
        if steps > leaf.backward_depth() {
            return Err(DirichletError::DepthTooShallow {
                needed: steps,
                available: leaf.backward_depth(),
            });
        }
        for i in 0..leaf.node_count() {
            let g = layout.global(j, i);
            let mut log_w = 0.0;
            for k in 1..=steps {
                let lj = leaf.log_jacobian_backward(i, k).unwrap();
                log_w += lj;
                let a = lj.exp();
                a_min = a_min.min(a);
                a_max = a_max.max(a);
            }
            let w = log_w.exp();
            let gamma = grad[g] * grad[g];
            let m = measure.mass(g);
            weighted_integral += m * w * w * gamma;
            nodal_energy += m * gamma;
        }
    }
    if steps == 0 {
        a_min = 1.0;
        a_max = 1.0;
    }
    let ratio = if nodal_energy == 0.0 {
        1.0
    } else {
        weighted_integral / nodal_energy
    };

    let mut conformal = None;
    let mut spectral_defect = None;
    if steps > 0 && a_max <= a_min * (1.0 + 1e-9) {
        let a = 0.5 * (a_min + a_max);
        conformal = Some(a);
        // One expansion constant means the composed energy is the
        // rescaled form a^{2n} E, whose semigroup is the original one
        // run at a^{2n}-fold speed; compare the two directly.
        let factor = a.powi(2 * n as i32);
        let hop = HeatOperator::new(&form, &measure);
        let hop_scaled = HeatOperator::new(&form.scaled(factor), &measure);
        let theta1 = hop.eigenvalues(0).get(1).copied().unwrap_or(1.0);
        let t = 1.0 / (factor * theta1.max(1e-12));
        let lhs = heat(&hop_scaled, t, phi)?;
        let rhs = heat(&hop, factor * t, phi)?;
        let defect = lhs
            .iter()
            .zip(&rhs)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        spectral_defect = Some(defect);
    }

    Ok(QuasiInvarianceReport {
        order: n,
        energy,
        nodal_energy,
        weighted_integral,
        ratio,
        a_min,
        a_max,
        conformal,
        spectral_defect,
    })
}
