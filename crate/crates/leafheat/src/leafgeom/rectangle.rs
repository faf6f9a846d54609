//! Rectangles: finite families of leaf segments over a stable
//! transversal, the discrete stand-in for a product neighbourhood.

use super::bracket::{bracket, bracket_closed_form, bracket_point, solenoid_leaf_state};
use super::leaf::{trace_leaf, LeafSegment};
use super::GeomError;
use crate::dynamics::{
    wrapped_diff, AttractorPoint, BackwardOrbit, HyperbolicSystem, OrbitSampler, Point,
};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Geometric parameters of a rectangle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RectangleSpec {
    /// Leaf arc radius.
    pub eps: f64,
    /// Node spacing along each leaf.
    pub h: f64,
    /// Stable radius: transversals are collected within this distance of
    /// the base along its stable set.
    pub eps_s: f64,
    /// Backward depth used when tracing the leaves.
    pub n_back: usize,
    /// Number of leaves (transversals).
    pub leaves: usize,
}

/// How the stable transversal of a rectangle is chosen.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum TransversalMode {
    /// Evenly spaced stable offsets from the base, at cell centres, so
    /// nearest-transversal binning partitions the stable range into
    /// equal cells.  Exact for toral systems, whose stable sets are
    /// straight lines; rejected for the others.
    Equispaced,
    /// Transversals discovered by walking the orbit from `seed` and
    /// clustering the stable representatives of the visited leaves —
    /// the construction for fractal (Cantor) transversals.
    OrbitClusters { seed: u64, max_steps: usize },
}

/// A family of leaf segments over a finite stable transversal, with
/// quotient weights attached to the leaves.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rectangle {
    base: AttractorPoint,
    transversals: Vec<Point>,
    leaves: Vec<LeafSegment>,
    quotient_weights: Vec<f64>,
    eps: f64,
    h: f64,
    eps_s: f64,
    /// Acceptance radius when matching a stable representative to the
    /// nearest transversal.
    transversal_tol: f64,
}

impl Rectangle {
    /// Builds the rectangle around `base` (which must carry backward
    /// history at least `spec.n_back` deep plus the system's direction
    /// depth, unless safe synthesis covers it).
    pub fn build(
        sys: &HyperbolicSystem,
        base: &AttractorPoint,
        spec: &RectangleSpec,
        mode: TransversalMode,
    ) -> Result<Rectangle, GeomError> {
        if spec.leaves == 0 {
            return Err(GeomError::BadParameters("need at least one leaf".into()));
        }
        if !(spec.eps_s > 0.0) || spec.eps_s >= sys.bracket_delta() {
            return Err(GeomError::BadParameters(format!(
                "stable radius must lie in (0, {})",
                sys.bracket_delta()
            )));
        }

        let (transversals, leaves, transversal_tol) = match mode {
            TransversalMode::Equispaced => build_equispaced(sys, base, spec)?,
            TransversalMode::OrbitClusters { seed, max_steps } => {
                build_orbit_clusters(sys, base, spec, seed, max_steps)?
            }
        };

        let rect = Rectangle {
            base: base.clone(),
            transversals,
            leaves,
            quotient_weights: vec![1.0 / spec.leaves as f64; spec.leaves],
            eps: spec.eps,
            h: spec.h,
            eps_s: spec.eps_s,
            transversal_tol,
        };

        // Every node must stay within the product-structure range of the
        // base, or brackets between rectangle points are not defined.
        let mut worst = 0.0f64;
        for leaf in &rect.leaves {
            for node in leaf.nodes() {
                worst = worst.max(sys.distance(node, rect.base.point()));
            }
        }
        if worst >= sys.bracket_delta() {
            return Err(GeomError::BadParameters(format!(
                "rectangle reaches {worst:.3} from its base, beyond the product radius {}",
                sys.bracket_delta()
            )));
        }

        Ok(rect)
    }

    pub fn base(&self) -> &Point {
        self.base.point()
    }

    pub fn base_orbit(&self) -> &AttractorPoint {
        &self.base
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaves(&self) -> &[LeafSegment] {
        &self.leaves
    }

    pub fn leaf(&self, j: usize) -> &LeafSegment {
        &self.leaves[j]
    }

    pub fn transversals(&self) -> &[Point] {
        &self.transversals
    }

    pub fn radius(&self) -> f64 {
        self.eps
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn stable_radius(&self) -> f64 {
        self.eps_s
    }

    /// Normalised leaf weights (the quotient measure).
    pub fn quotient_weights(&self) -> &[f64] {
        &self.quotient_weights
    }

    /// Replaces the quotient weights; they are normalised to unit sum.
    pub fn set_quotient_weights(&mut self, w: &[f64]) -> Result<(), GeomError> {
        if w.len() != self.leaves.len() {
            return Err(GeomError::BadParameters(format!(
                "{} weights for {} leaves",
                w.len(),
                self.leaves.len()
            )));
        }
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(GeomError::BadParameters(
                "weights must be non-negative".into(),
            ));
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(GeomError::BadParameters("weights must not all vanish".into()));
        }
        self.quotient_weights = w.iter().map(|x| x / total).collect();
        Ok(())
    }

    /// The leaf `q` belongs to, together with `q`'s arc coordinate
    /// within that leaf.
    ///
    /// `q` is matched by its stable representative — the product point
    /// `bracket(base, q)`, which depends only on the leaf through `q` —
    /// against the transversals.  Closed-form representatives are used
    /// where available; the surgered map falls back to the iterative
    /// product and so needs backward history on `q`.
    pub fn locate(
        &self,
        sys: &HyperbolicSystem,
        q: &AttractorPoint,
    ) -> Result<(usize, f64), GeomError> {
        if let Some(hit) = self.locate_closed_form(sys, q.point()) {
            return hit;
        }

        // Generic path: iterative product, arc by projection on the
        // nearest node's tangent.
        let rep = bracket(sys, &self.base, q)?;
        let j = self.nearest_transversal(sys, &rep)?;
        let leaf = &self.leaves[j];
        let mut best = (f64::INFINITY, 0usize);
        for (i, node) in leaf.nodes().iter().enumerate() {
            let d = sys.distance(node, q.point());
            if d < best.0 {
                best = (d, i);
            }
        }
        let node = leaf.node(best.1);
        let along = sys.metric_dot(
            node,
            &sys.displacement(node, q.point()),
            leaf.tangent(best.1),
        );
        let arc = leaf.arcs()[best.1] + along;
        self.arc_in_range(arc).map(|s| (j, s))
    }

    /// [`Rectangle::locate`] for points without recorded history, on the
    /// systems with closed-form stable representatives.
    pub fn locate_point(
        &self,
        sys: &HyperbolicSystem,
        q: &Point,
    ) -> Result<(usize, f64), GeomError> {
        match self.locate_closed_form(sys, q) {
            Some(hit) => hit,
            None => Err(GeomError::BadParameters(
                "this system needs backward history to locate points".into(),
            )),
        }
    }

    /// Index of the leaf `q` belongs to: the binning map of the
    /// rectangle's disintegration.
    pub fn stable_projection(
        &self,
        sys: &HyperbolicSystem,
        q: &AttractorPoint,
    ) -> Result<usize, GeomError> {
        Ok(self.locate(sys, q)?.0)
    }

    /// Whether `q` belongs to the rectangle.
    pub fn contains(&self, sys: &HyperbolicSystem, q: &AttractorPoint) -> bool {
        self.locate(sys, q).is_ok()
    }

    fn locate_closed_form(
        &self,
        sys: &HyperbolicSystem,
        q: &Point,
    ) -> Option<Result<(usize, f64), GeomError>> {
        if let Some(t) = sys.as_toral() {
            let d = sys.displacement(self.base.point(), q);
            let (u, s) = t.uv_coords(&Vector2::new(d.x, d.y));
            let rep = sys.offset(
                self.base.point(),
                &crate::dynamics::Vec3::new(t.e_s.x * s, t.e_s.y * s, 0.0),
            );
            let j = match self.nearest_transversal(sys, &rep) {
                Ok(j) => j,
                Err(e) => return Some(Err(e)),
            };
            // Arc within leaf j: the unstable component relative to its
            // transversal equals the one relative to the base, up to the
            // orientation the leaf happened to be traced with.
            let leaf = &self.leaves[j];
            let tb = leaf.tangent(leaf.base_index());
            let orient = (tb.x * t.e_u.x + tb.y * t.e_u.y).signum();
            return Some(self.arc_in_range(orient * u).map(|s| (j, s)));
        }
        if let Some(sol) = sys.as_solenoid() {
            let theta0 = self.base.point().0.z;
            let (rep, _) = solenoid_leaf_state(sol, q, theta0);
            let j = match self.nearest_transversal(sys, &rep) {
                Ok(j) => j,
                Err(e) => return Some(Err(e)),
            };
            // Arc from the representative to q along the leaf, by
            // Simpson quadrature of the series speed in angle, oriented
            // the way the leaf was traced (leaves are monotone in angle).
            let dtheta = wrapped_diff(q.0.z - theta0, TAU);
            let speed = |frac: f64| {
                let (p, v) = solenoid_leaf_state(sol, q, theta0 + frac * dtheta);
                (v.x * v.x + v.y * v.y + (sol.embed_radius + p.0.x).powi(2)).sqrt()
            };
            let leaf = &self.leaves[j];
            let orient = leaf.tangent(leaf.base_index()).z.signum();
            let arc = orient * dtheta * (speed(0.0) + 4.0 * speed(0.5) + speed(1.0)) / 6.0;
            return Some(self.arc_in_range(arc).map(|s| (j, s)));
        }
        None
    }

    fn nearest_transversal(
        &self,
        sys: &HyperbolicSystem,
        rep: &Point,
    ) -> Result<usize, GeomError> {
        let mut best = (f64::INFINITY, 0usize);
        for (j, z) in self.transversals.iter().enumerate() {
            let d = sys.distance(rep, z);
            if d < best.0 {
                best = (d, j);
            }
        }
        if best.0 <= self.transversal_tol {
            Ok(best.1)
        } else {
            Err(GeomError::outside(rep))
        }
    }

    fn arc_in_range(&self, arc: f64) -> Result<f64, GeomError> {
        // Slack of h/1000 keeps measured boundary nodes inside despite
        // quadrature noise in the arc estimate.
        if arc.abs() <= self.eps + 1e-3 * self.h {
            Ok(arc)
        } else {
            Err(GeomError::OutsideRectangle {
                x: arc,
                y: 0.0,
                z: 0.0,
            })
        }
    }
}

fn build_equispaced(
    sys: &HyperbolicSystem,
    base: &AttractorPoint,
    spec: &RectangleSpec,
) -> Result<(Vec<Point>, Vec<LeafSegment>, f64), GeomError> {
    let t = sys
        .as_toral()
        .ok_or_else(|| {
            GeomError::BadParameters(
                "evenly spaced transversals need a straight stable set".into(),
            )
        })?;
    let j_count = spec.leaves;
    let cell = 2.0 * spec.eps_s / j_count as f64;
    let mut transversals = Vec::with_capacity(j_count);
    let mut leaves = Vec::with_capacity(j_count);
    for j in 0..j_count {
        let s = -spec.eps_s + (j as f64 + 0.5) * cell;
        let z = sys.offset(
            base.point(),
            &crate::dynamics::Vec3::new(t.e_s.x * s, t.e_s.y * s, 0.0),
        );
        leaves.push(trace_leaf(
            sys,
            &AttractorPoint::bare(z),
            spec.eps,
            spec.h,
            spec.n_back,
        )?);
        transversals.push(z);
    }
    Ok((transversals, leaves, 0.5 * cell * (1.0 + 1e-9)))
}

fn build_orbit_clusters(
    sys: &HyperbolicSystem,
    base: &AttractorPoint,
    spec: &RectangleSpec,
    seed: u64,
    max_steps: usize,
) -> Result<(Vec<Point>, Vec<LeafSegment>, f64), GeomError> {
    let j_count = spec.leaves;
    let gate = 0.9 * sys.bracket_delta();
    let want = (40 * j_count).max(200);

    // Collect stable representatives of visited leaves near the base.
    let mut cands: Vec<(Point, AttractorPoint)> = vec![(*base.point(), base.clone())];
    let mut sampler = OrbitSampler::new(sys, seed);
    for _ in 0..max_steps {
        sampler.step();
        if cands.len() >= want {
            break;
        }
        if sys.distance(sampler.current(), base.point()) >= gate {
            continue;
        }
        let snap = sampler.snapshot();
        let rep = match bracket_closed_form(sys, base.point(), snap.point()) {
            Some(r) => r,
            None => bracket(sys, base, &snap)?,
        };
        if sys.distance(&rep, base.point()) <= spec.eps_s {
            cands.push((rep, snap));
        }
    }
    if cands.len() < j_count {
        return Err(GeomError::BadParameters(format!(
            "found only {} candidate leaves in {} steps; need {}",
            cands.len(),
            max_steps,
            j_count
        )));
    }

    // Cluster representatives at decreasing separation until the
    // requested number of distinct leaves appears.
    let mut gap = spec.eps_s;
    let clusters = loop {
        let mut clusters: Vec<usize> = Vec::new(); // indices into cands
        for (i, (rep, _)) in cands.iter().enumerate() {
            let absorbed = clusters
                .iter()
                .any(|&c| sys.distance(rep, &cands[c].0) <= gap);
            if !absorbed {
                clusters.push(i);
            }
        }
        if clusters.len() >= j_count {
            break clusters;
        }
        gap /= 1.6;
        if gap < 1e-9 * spec.eps_s {
            return Err(GeomError::BadParameters(format!(
                "only {} distinct leaves near the base; need {}",
                clusters.len(),
                j_count
            )));
        }
    };

    // Keep the J clusters nearest the base, deterministically ordered.
    let mut chosen: Vec<usize> = clusters;
    chosen.sort_by(|&a, &b| {
        let da = sys.distance(&cands[a].0, base.point());
        let db = sys.distance(&cands[b].0, base.point());
        da.partial_cmp(&db)
            .unwrap()
            .then(cands[a].0 .0.x.partial_cmp(&cands[b].0 .0.x).unwrap())
    });
    chosen.truncate(j_count);

    let deep = spec.n_back + sys.eu_depth();
    let mut transversals = Vec::with_capacity(j_count);
    let mut leaves = Vec::with_capacity(j_count);
    for &c in &chosen {
        let z_orbit = if c == 0 {
            base.clone()
        } else {
            bracket_point(sys, base, &cands[c].1, deep)?
        };
        transversals.push(*z_orbit.point());
        leaves.push(trace_leaf(sys, &z_orbit, spec.eps, spec.h, spec.n_back)?);
    }

    let mut min_sep = f64::INFINITY;
    for a in 0..transversals.len() {
        for b in a + 1..transversals.len() {
            min_sep = min_sep.min(sys.distance(&transversals[a], &transversals[b]));
        }
    }
    if !(min_sep > 0.0) {
        return Err(GeomError::BadParameters(
            "transversals collapsed onto each other".into(),
        ));
    }
    Ok((transversals, leaves, min_sep / 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Vec3;
    use crate::leafgeom::bracket_point;

    fn cat_rect() -> (HyperbolicSystem, Rectangle) {
        let sys = HyperbolicSystem::cat_map();
        let base = AttractorPoint::bare(Point::planar(0.31, 0.64));
        let spec = RectangleSpec {
            eps: 0.1,
            h: 0.1 / 32.0,
            eps_s: 0.08,
            n_back: 5,
            leaves: 8,
        };
        let rect = Rectangle::build(&sys, &base, &spec, TransversalMode::Equispaced).unwrap();
        (sys, rect)
    }

    fn solenoid_rect() -> (HyperbolicSystem, Rectangle) {
        let sys = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sys, 40);
        sampler.advance(50);
        let base = sampler.snapshot();
        let spec = RectangleSpec {
            eps: 0.15,
            h: 0.15 / 16.0,
            eps_s: 0.08,
            n_back: 14,
            leaves: 4,
        };
        let rect = Rectangle::build(
            &sys,
            &base,
            &spec,
            TransversalMode::OrbitClusters {
                seed: 91,
                max_steps: 400_000,
            },
        )
        .unwrap();
        (sys, rect)
    }

    #[test]
    fn equispaced_transversals_sit_at_stable_cell_centres() {
        let (sys, rect) = cat_rect();
        let t = sys.as_toral().unwrap();
        assert_eq!(rect.leaf_count(), 8);
        let cell = 2.0 * rect.stable_radius() / 8.0;
        for (j, z) in rect.transversals().iter().enumerate() {
            let s = -rect.stable_radius() + (j as f64 + 0.5) * cell;
            let expect = sys.offset(rect.base(), &Vec3::new(t.e_s.x * s, t.e_s.y * s, 0.0));
            assert!(sys.distance(z, &expect) < 1e-12);
            assert!(sys.distance(rect.leaf(j).base(), z) < 1e-10);
        }
        let total: f64 = rect.quotient_weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(rect
            .quotient_weights()
            .iter()
            .all(|w| (w - 0.125).abs() < 1e-12));
    }

    #[test]
    fn nodes_bin_to_their_own_leaf_with_their_own_arc() {
        let (sys, rect) = cat_rect();
        for j in 0..rect.leaf_count() {
            let leaf = rect.leaf(j);
            for i in (0..leaf.node_count()).step_by(7) {
                let q = leaf.node_orbit(i);
                let (jj, arc) = rect.locate(&sys, &q).unwrap();
                assert_eq!(jj, j, "node {i} of leaf {j} binned to {jj}");
                assert!(
                    (arc - leaf.arcs()[i]).abs() < 1e-8,
                    "arc {arc} vs recorded {}",
                    leaf.arcs()[i]
                );
            }
        }
    }

    #[test]
    fn fractal_transversals_share_the_base_angle_and_separate() {
        let (sys, rect) = solenoid_rect();
        assert_eq!(rect.leaf_count(), 4);
        let theta0 = rect.base().0.z;
        for z in rect.transversals() {
            assert!(
                wrapped_diff(z.0.z - theta0, TAU).abs() < 1e-9,
                "transversal off the stable slice"
            );
        }
        for a in 0..4 {
            for b in a + 1..4 {
                assert!(
                    sys.distance(&rect.transversals()[a], &rect.transversals()[b]) > 1e-4,
                    "transversals {a} and {b} nearly coincide"
                );
            }
        }
        // The base's own leaf is represented.
        assert!(sys.distance(&rect.transversals()[0], rect.base()) < 1e-12);
    }

    #[test]
    fn solenoid_nodes_bin_to_their_own_leaf() {
        let (sys, rect) = solenoid_rect();
        for j in 0..rect.leaf_count() {
            let leaf = rect.leaf(j);
            for i in (0..leaf.node_count()).step_by(11) {
                let q = leaf.node_orbit(i);
                let (jj, arc) = rect.locate(&sys, &q).unwrap();
                assert_eq!(jj, j);
                assert!(
                    (arc - leaf.arcs()[i]).abs() < 1e-6,
                    "arc {arc} vs recorded {}",
                    leaf.arcs()[i]
                );
            }
        }
    }

    #[test]
    fn products_of_rectangle_points_stay_in_the_rectangle() {
        let (sys, rect) = solenoid_rect();
        let quarter = rect.leaf(0).node_count() / 4;
        for ja in 0..rect.leaf_count() {
            for jb in 0..rect.leaf_count() {
                let a = rect.leaf(ja).node_orbit(rect.leaf(ja).base_index() + quarter / 2);
                let b = rect.leaf(jb).node_orbit(rect.leaf(jb).base_index() - quarter / 2);
                let r = bracket_point(&sys, &a, &b, 14).unwrap();
                let (j, arc) = rect.locate(&sys, &r).unwrap();
                assert_eq!(
                    j, jb,
                    "product of leaves {ja},{jb} binned to {j} instead of {jb}"
                );
                assert!(arc.abs() <= rect.radius());
            }
        }
    }

    #[test]
    fn points_outside_are_rejected() {
        let (sys, rect) = cat_rect();
        let t = sys.as_toral().unwrap();
        let far_stable = sys.offset(
            rect.base(),
            &Vec3::new(t.e_s.x * 0.15, t.e_s.y * 0.15, 0.0),
        );
        assert!(matches!(
            rect.locate(&sys, &AttractorPoint::bare(far_stable)),
            Err(GeomError::OutsideRectangle { .. })
        ));
        let far_leaf = sys.offset(rect.base(), &Vec3::new(t.e_u.x * 0.18, t.e_u.y * 0.18, 0.0));
        assert!(rect.locate(&sys, &AttractorPoint::bare(far_leaf)).is_err());
    }

    #[test]
    fn weights_are_validated_and_normalised() {
        let (_, mut rect) = cat_rect();
        assert!(rect.set_quotient_weights(&[1.0; 3]).is_err());
        assert!(rect.set_quotient_weights(&[-1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
        rect.set_quotient_weights(&[2.0; 8]).unwrap();
        assert!(rect.quotient_weights().iter().all(|w| (w - 0.125).abs() < 1e-15));
    }

    #[test]
    fn serialisation_round_trips_bit_exactly() {
        let (_, rect) = cat_rect();
        let json = serde_json::to_string(&rect).unwrap();
        let back: Rectangle = serde_json::from_str(&json).unwrap();
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn equispaced_mode_requires_a_toral_system() {
        let sys = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sys, 1);
        sampler.advance(5);
        let spec = RectangleSpec {
            eps: 0.15,
            h: 0.15 / 16.0,
            eps_s: 0.05,
            n_back: 10,
            leaves: 4,
        };
        assert!(matches!(
            Rectangle::build(&sys, &sampler.snapshot(), &spec, TransversalMode::Equispaced),
            Err(GeomError::BadParameters(_))
        ));
    }
}
