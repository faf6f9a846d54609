//! Traced local unstable leaves: arc-length node grids with recorded
//! backward chains.

use super::chart::SeedChart;
use super::GeomError;
use crate::dynamics::{AttractorPoint, HyperbolicSystem, Point, Vec3};
use serde::{Deserialize, Serialize};

/// Number of vertices in the first (coarse) polyline pass.  Odd so the
/// centre parameter 0 is sampled exactly.
const COARSE_N: usize = 129;

/// Fine polyline spacing as a fraction of the node spacing `h`.
const FINE_FRACTION: f64 = 8.0;

/// A finite piece of a local unstable leaf, sampled at equal arc steps.
///
/// Node `i` sits at signed arc length `arc[i] = (i - base_index) * h`
/// from the base point.  For every node the full backward chain down to
/// depth `n_back` is stored (`backward_node`), together with the log
/// expansion factor of each step (`log_jacobian_backward`), so densities
/// and holonomies along the leaf can be evaluated without ever running
/// the map backwards.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LeafSegment {
    base: Point,
    eps: f64,
    h: f64,
    n_back: usize,
    nodes: Vec<Point>,
    tangents: Vec<Vec3>,
    arc: Vec<f64>,
    base_index: usize,
    /// Flattened chains: entry `i * (n_back + 1) + k` is `f^{k - n_back}`
    /// of node `i` (so `k = 0` is the deepest preimage, `k = n_back` the
    /// node itself).
    chain_points: Vec<Point>,
    /// Flattened log expansions: entry `i * n_back + k` is the log
    /// unstable Jacobian at stage `k` of chain `i`.
    log_jac: Vec<f64>,
}

impl LeafSegment {
    /// The node the leaf was traced through (arc coordinate 0).
    pub fn base(&self) -> &Point {
        &self.base
    }

    /// Requested arc radius.
    pub fn radius(&self) -> f64 {
        self.eps
    }

    /// Node spacing in arc length.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Backward depth recorded for every node.
    pub fn backward_depth(&self) -> usize {
        self.n_back
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Point {
        &self.nodes[i]
    }

    /// Unit leaf tangent at node `i`.
    pub fn tangent(&self, i: usize) -> &Vec3 {
        &self.tangents[i]
    }

    /// Signed arc coordinates of the nodes (base at 0).
    pub fn arcs(&self) -> &[f64] {
        &self.arc
    }

    /// Index of the base node.
    pub fn base_index(&self) -> usize {
        self.base_index
    }

    /// `f^{-j}` of node `i`, for `j <= backward_depth()`.
    pub fn backward_node(&self, i: usize, j: usize) -> Option<&Point> {
        if i >= self.nodes.len() || j > self.n_back {
            return None;
        }
        Some(&self.chain_points[i * (self.n_back + 1) + (self.n_back - j)])
    }

    /// Log unstable expansion at `f^{-j}` of node `i`, for `1 <= j <= backward_depth()`.
    ///
    /// This is the factor by which one application of the map stretches
    /// the leaf at that preimage, so the product over `j = 1..=n` is the
    /// expansion of `f^n` along the chain ending at node `i`.
    pub fn log_jacobian_backward(&self, i: usize, j: usize) -> Option<f64> {
        if i >= self.nodes.len() || j == 0 || j > self.n_back {
            return None;
        }
        Some(self.log_jac[i * self.n_back + (self.n_back - j)])
    }

    /// The node together with its recorded backward history.
    pub fn node_orbit(&self, i: usize) -> AttractorPoint {
        let s = i * (self.n_back + 1);
        let mut hist: Vec<Point> = self.chain_points[s..s + self.n_back + 1].to_vec();
        hist.reverse();
        AttractorPoint::from_history(hist)
    }

    /// Largest deviation of measured node-to-node chord length from `h`,
    /// relative to `h`.
    pub fn spacing_residual(&self, sys: &HyperbolicSystem) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| ((sys.distance(&w[0], &w[1]) - self.h) / self.h).abs())
            .fold(0.0, f64::max)
    }

    /// A-priori bound on the distance between the traced segment and the
    /// true leaf: contraction constant times `lambda^n_back` times the
    /// radius.
    pub fn truncation_bound(&self, sys: &HyperbolicSystem) -> f64 {
        let hyp = sys.hyperbolicity();
        hyp.c * hyp.lambda.powi(self.n_back as i32) * self.eps
    }
}

/// Traces the local unstable leaf through `x` out to arc radius `eps`,
/// with nodes every `h` of arc length, seeding the construction at
/// backward depth `n_back`.
///
/// Requires `h <= eps / 16` and `eps` within the system's chart radius.
/// Deeper `n_back` places the traced segment closer to the true leaf
/// (error `O(lambda^n_back * eps)`); the necessary backward data must be
/// available from `x`'s recorded history or safe synthesis.
pub fn trace_leaf(
    sys: &HyperbolicSystem,
    x: &AttractorPoint,
    eps: f64,
    h: f64,
    n_back: usize,
) -> Result<LeafSegment, GeomError> {
    if !(eps > 0.0) || !(h > 0.0) {
        return Err(GeomError::BadParameters(
            "radius and spacing must be positive".into(),
        ));
    }
    if eps > sys.chart_eps() * (1.0 + 1e-12) {
        return Err(GeomError::BadParameters(format!(
            "radius {eps} exceeds chart radius {}",
            sys.chart_eps()
        )));
    }
    if h > eps / 16.0 * (1.0 + 1e-12) {
        return Err(GeomError::BadParameters(format!(
            "spacing {h} exceeds radius/16 = {}",
            eps / 16.0
        )));
    }

    let chart = SeedChart::build(sys, x, n_back, 1.25 * eps)?;
    let need = eps + h;

    // Coarse pass: adjust the parameter half-range until the pushed
    // segment covers `need` of arc on both sides of the centre.
    let mut half = chart.half_len;
    let mut fold_retries = 0usize;
    let (coarse_ts, coarse_pts) = 'cover: {
        for _attempt in 0..8 {
            let ts: Vec<f64> = (0..COARSE_N)
                .map(|k| half * (2.0 * k as f64 / (COARSE_N - 1) as f64 - 1.0))
                .collect();
            let pts: Vec<Point> = ts.iter().map(|t| chart.push_point(sys, *t)).collect();
            if let Some(v) = fold_vertex(sys, &pts) {
                if fold_retries < 3 {
                    fold_retries += 1;
                    half *= 0.5;
                    continue;
                }
                return Err(GeomError::FoldOver { vertex: v });
            }
            let (left, right) = side_coverage(sys, &pts);
            let short = left.min(right);
            if short < need {
                half *= 1.3 * (need / short.max(need / 16.0));
                continue;
            }
            if short > 4.0 * need {
                half /= short / (2.0 * need);
                continue;
            }
            break 'cover (ts, pts);
        }
        return Err(GeomError::BadParameters(
            "could not cover the requested arc radius".into(),
        ));
    };

    // Fine pass: subdivide every coarse interval down to ~h/8 chords.
    let df = h / FINE_FRACTION;
    let mut fine_ts = Vec::new();
    for k in 0..COARSE_N - 1 {
        let gap = sys.distance(&coarse_pts[k], &coarse_pts[k + 1]);
        let n_sub = (gap / df).ceil().max(1.0) as usize;
        for i in 0..n_sub {
            fine_ts.push(coarse_ts[k] + (coarse_ts[k + 1] - coarse_ts[k]) * i as f64 / n_sub as f64);
        }
    }
    fine_ts.push(coarse_ts[COARSE_N - 1]);
    let fine_pts: Vec<Point> = fine_ts.iter().map(|t| chart.push_point(sys, *t)).collect();
    if let Some(v) = fold_vertex(sys, &fine_pts) {
        return Err(GeomError::FoldOver { vertex: v });
    }

    let mut arcs = Vec::with_capacity(fine_pts.len());
    let mut acc = 0.0;
    arcs.push(0.0);
    for w in fine_pts.windows(2) {
        acc += sys.distance(&w[0], &w[1]);
        arcs.push(acc);
    }
    let centre = fine_ts
        .iter()
        .position(|t| *t == 0.0)
        .expect("centre parameter is a coarse vertex");
    let s0 = arcs[centre];

    // Nodes at arc targets i*h, re-pushed with full chains.
    let m = (eps / h + 1e-9).floor() as usize;
    let count = 2 * m + 1;
    let mut nodes = Vec::with_capacity(count);
    let mut tangents = Vec::with_capacity(count);
    let mut arc = Vec::with_capacity(count);
    let mut chain_points = Vec::with_capacity(count * (n_back + 1));
    let mut log_jac = Vec::with_capacity(count * n_back);
    for i in 0..count {
        let offset = (i as f64) - (m as f64);
        let target = s0 + offset * h;
        let t = inverse_interp(&arcs, &fine_ts, target);
        let chain = chart.push_chain(sys, t);
        nodes.push(chain.points[n_back]);
        tangents.push(chain.tangent);
        arc.push(offset * h);
        chain_points.extend_from_slice(&chain.points);
        log_jac.extend_from_slice(&chain.log_jac);
    }

    Ok(LeafSegment {
        base: nodes[m],
        eps,
        h,
        n_back,
        nodes,
        tangents,
        arc,
        base_index: m,
        chain_points,
        log_jac,
    })
}

/// Returns the first vertex where the polyline folds back (consecutive
/// chords at an obtuse angle) or degenerates, if any.
fn fold_vertex(sys: &HyperbolicSystem, pts: &[Point]) -> Option<usize> {
    for k in 0..pts.len() - 1 {
        let c = sys.displacement(&pts[k], &pts[k + 1]);
        if sys.metric_dot(&pts[k], &c, &c) == 0.0 {
            return Some(k);
        }
        if k > 0 {
            let prev = sys.displacement(&pts[k - 1], &pts[k]);
            if sys.metric_dot(&pts[k], &prev, &c) <= 0.0 {
                return Some(k);
            }
        }
    }
    None
}

/// Arc length covered on each side of the centre vertex.
fn side_coverage(sys: &HyperbolicSystem, pts: &[Point]) -> (f64, f64) {
    let centre = pts.len() / 2;
    let mut left = 0.0;
    for k in 0..centre {
        left += sys.distance(&pts[k], &pts[k + 1]);
    }
    let mut right = 0.0;
    for k in centre..pts.len() - 1 {
        right += sys.distance(&pts[k], &pts[k + 1]);
    }
    (left, right)
}

/// Monotone-safeguarded quadratic inverse interpolation of the sampled
/// arc-to-parameter relation.
fn inverse_interp(arcs: &[f64], ts: &[f64], target: f64) -> f64 {
    let k = arcs.partition_point(|a| *a < target).clamp(1, arcs.len() - 1);
    let (a0, a1) = (arcs[k - 1], arcs[k]);
    let (t0, t1) = (ts[k - 1], ts[k]);
    let lin = t0 + (t1 - t0) * (target - a0) / (a1 - a0);
    // Second-order correction from a neighbouring sample (Newton form).
    let k2 = if k + 1 < arcs.len() { k + 1 } else { k - 2 };
    let (a2, t2) = (arcs[k2], ts[k2]);
    let d01 = (t1 - t0) / (a1 - a0);
    let d12 = (t2 - t1) / (a2 - a1);
    let d012 = (d12 - d01) / (a2 - a0);
    let quad = t0 + d01 * (target - a0) + d012 * (target - a0) * (target - a1);
    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
    if quad.is_finite() && quad >= lo && quad <= hi {
        quad
    } else {
        lin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::BackwardOrbit;
    use crate::dynamics::OrbitSampler;

    fn cat_leaf_through(
        p: Point,
        eps: f64,
        h: f64,
        n_back: usize,
    ) -> (HyperbolicSystem, LeafSegment) {
        let sys = HyperbolicSystem::cat_map();
        let x = AttractorPoint::bare(p);
        let leaf = trace_leaf(&sys, &x, eps, h, n_back).unwrap();
        (sys, leaf)
    }

    #[test]
    fn linear_leaf_matches_the_eigenline() {
        let base = Point::planar(0.2, 0.6);
        let (sys, leaf) = cat_leaf_through(base, 0.1, 0.1 / 32.0, 6);
        let t = sys.as_toral().unwrap();
        let e_u = t.e_u;
        for (i, node) in leaf.nodes().iter().enumerate() {
            let s = leaf.arcs()[i];
            let expect = sys.offset(&base, &Vec3::new(e_u.x * s, e_u.y * s, 0.0));
            assert!(
                sys.distance(node, &expect) < 1e-10,
                "node {i} off the eigenline by {}",
                sys.distance(node, &expect)
            );
        }
    }

    #[test]
    fn nodes_are_equally_spaced_in_arc_length() {
        let (sys, leaf) = cat_leaf_through(Point::planar(0.37, 0.81), 0.12, 0.12 / 64.0, 8);
        assert!(leaf.spacing_residual(&sys) < 1e-9);

        let sol = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sol, 7);
        sampler.advance(40);
        let x = sampler.snapshot();
        let leaf = trace_leaf(&sol, &x, 0.2, 0.2 / 64.0, 20).unwrap();
        assert!(
            leaf.spacing_residual(&sol) < 1e-5,
            "solenoid spacing residual {}",
            leaf.spacing_residual(&sol)
        );
    }

    #[test]
    fn halving_the_spacing_refines_the_node_set() {
        let base = Point::planar(0.41, 0.13);
        let (sys, coarse) = cat_leaf_through(base, 0.08, 0.08 / 16.0, 5);
        let (_, fine) = cat_leaf_through(base, 0.08, 0.08 / 32.0, 5);
        for i in 0..coarse.node_count() {
            let j = 2 * i;
            assert!(
                sys.distance(coarse.node(i), fine.node(j)) < 1e-9,
                "coarse node {i} not reproduced: {}",
                sys.distance(coarse.node(i), fine.node(j))
            );
        }

        let sol = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sol, 11);
        sampler.advance(25);
        let x = sampler.snapshot();
        let coarse = trace_leaf(&sol, &x, 0.16, 0.16 / 16.0, 18).unwrap();
        let fine = trace_leaf(&sol, &x, 0.16, 0.16 / 32.0, 18).unwrap();
        for i in 0..coarse.node_count() {
            assert!(sol.distance(coarse.node(i), fine.node(2 * i)) < 1e-7);
        }
    }

    #[test]
    fn deeper_seeding_changes_nodes_less_than_the_truncation_bound() {
        let sol = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sol, 3);
        sampler.advance(60);
        let x = sampler.snapshot();
        let shallow = trace_leaf(&sol, &x, 0.2, 0.2 / 32.0, 15).unwrap();
        let deep = trace_leaf(&sol, &x, 0.2, 0.2 / 32.0, 25).unwrap();
        let bound = shallow.truncation_bound(&sol);
        let mut worst = 0.0f64;
        for i in 0..shallow.node_count() {
            worst = worst.max(sol.distance(shallow.node(i), deep.node(i)));
        }
        assert!(
            worst < bound,
            "re-trace moved nodes by {worst}, bound {bound}"
        );
        // The true discrepancy is far below the certified bound.
        assert!(worst < 1e-6, "re-trace discrepancy unexpectedly large: {worst}");
    }

    #[test]
    fn backward_chains_stay_within_the_radius_of_the_base_chain() {
        let sol = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sol, 5);
        sampler.advance(30);
        let x = sampler.snapshot();
        let eps = 0.2;
        let leaf = trace_leaf(&sol, &x, eps, eps / 32.0, 22).unwrap();
        let b = leaf.base_index();
        for i in 0..leaf.node_count() {
            for j in 0..=leaf.backward_depth() {
                let d = sol.distance(
                    leaf.backward_node(i, j).unwrap(),
                    leaf.backward_node(b, j).unwrap(),
                );
                assert!(d < eps, "backward step {j} of node {i} drifted to {d}");
            }
        }
    }

    #[test]
    fn tangents_align_with_the_unstable_direction() {
        let sol = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sol, 13);
        sampler.advance(35);
        let x = sampler.snapshot();
        let leaf = trace_leaf(&sol, &x, 0.18, 0.18 / 32.0, 24).unwrap();
        for i in (0..leaf.node_count()).step_by(9) {
            let orbit = leaf.node_orbit(i);
            let e = sol.unstable_direction(&orbit, 16).unwrap();
            let dot = sol.metric_dot(leaf.node(i), leaf.tangent(i), &e).abs();
            assert!(
                dot > (1e-6f64).cos(),
                "tangent at node {i} misaligned: |cos| = {dot}"
            );
        }
    }

    #[test]
    fn backward_images_of_nodes_lie_on_the_backward_leaf() {
        let sys = HyperbolicSystem::cat_map();
        let mut sampler = OrbitSampler::new(&sys, 21);
        sampler.advance(10);
        let x = sampler.snapshot();
        let leaf = trace_leaf(&sys, &x, 0.1, 0.1 / 32.0, 6).unwrap();

        // Leaf through f^{-1}(x), slightly larger so contracted nodes stay
        // inside it.
        let mut hist = Vec::new();
        let mut j = 1;
        while let Some(p) = x.backward(j) {
            hist.push(*p);
            j += 1;
        }
        let x_prev = AttractorPoint::from_history(hist);
        let prev_leaf = trace_leaf(&sys, &x_prev, 0.1, 0.1 / 32.0, 6).unwrap();
        for i in (0..leaf.node_count()).step_by(5) {
            let pulled = leaf.backward_node(i, 1).unwrap();
            let d = super::super::distance_to_polyline(&sys, prev_leaf.nodes(), pulled);
            assert!(d < 1e-9, "pulled node {i} off the backward leaf by {d}");
        }
    }

    #[test]
    fn leaf_gradient_is_dominated_by_the_ambient_gradient() {
        use std::f64::consts::TAU;
        let sys = HyperbolicSystem::cat_map();
        let g = |p: &Point| (TAU * p.0.x).sin() * (TAU * 2.0 * p.0.y).cos();
        let grad = |p: &Point| {
            Vec3::new(
                TAU * (TAU * p.0.x).cos() * (TAU * 2.0 * p.0.y).cos(),
                -2.0 * TAU * (TAU * p.0.x).sin() * (TAU * 2.0 * p.0.y).sin(),
                0.0,
            )
        };
        let (eps, h) = (0.1, 0.1 / 64.0);
        let leaf = trace_leaf(&sys, &AttractorPoint::bare(Point::planar(0.3, 0.55)), eps, h, 4)
            .unwrap();
        for i in 1..leaf.node_count() - 1 {
            let fd = (g(leaf.node(i + 1)) - g(leaf.node(i - 1))) / (2.0 * h);
            let amb = grad(leaf.node(i)).norm();
            // Slack covers the O(h^2) finite-difference truncation, whose
            // scale is the third directional derivative (~ (4*pi)^3 here).
            assert!(
                fd.abs() <= amb + 400.0 * h * h,
                "leaf derivative {fd} exceeds ambient gradient {amb} at node {i}"
            );
        }
    }

    #[test]
    fn parameter_validation_rejects_bad_requests() {
        let sys = HyperbolicSystem::cat_map();
        let x = AttractorPoint::bare(Point::planar(0.1, 0.2));
        assert!(matches!(
            trace_leaf(&sys, &x, 0.1, 0.1 / 8.0, 4),
            Err(GeomError::BadParameters(_))
        ));
        assert!(matches!(
            trace_leaf(&sys, &x, 5.0, 0.01, 4),
            Err(GeomError::BadParameters(_))
        ));
        assert!(matches!(
            trace_leaf(&sys, &x, -0.1, 0.01, 4),
            Err(GeomError::BadParameters(_))
        ));
    }

    #[test]
    fn serialisation_round_trips_bit_exactly() {
        let (_, leaf) = cat_leaf_through(Point::planar(0.5, 0.25), 0.1, 0.1 / 16.0, 5);
        let json = serde_json::to_string(&leaf).unwrap();
        let back: LeafSegment = serde_json::from_str(&json).unwrap();
        assert_eq!(json, serde_json::to_string(&back).unwrap());
        for i in 0..leaf.node_count() {
            assert_eq!(leaf.node(i).0, back.node(i).0);
        }
    }
}
