//! The local product (holonomy) map.
//!
//! For nearby attractor points `p`, `q`, `bracket(p, q)` is the unique
//! point near both that lies on the local unstable leaf of `q` and on
//! the local stable set of `p`: sliding along `q`'s leaf until the
//! forward orbit locks onto that of `p`.  Binning points by
//! `bracket(base, q)` therefore identifies the leaf through `q`, which
//! is what rectangles use to disintegrate measures.

use super::chart::SeedChart;
use super::{robust_direction, GeomError};
use crate::dynamics::{
    wrapped_diff, AttractorPoint, BackwardOrbit, HyperbolicSystem, Point, Solenoid, Vec3,
};
use nalgebra::Vector2;
use std::f64::consts::{PI, TAU};

/// Evaluation budget for the root finder.
const MAX_EVALS: usize = 100;

/// Expansion gain past which forward magnification of a leaf-parallel
/// offset is considered resolved.
const HORIZON_GAIN: f64 = 1e6;

/// Hard cap on the forward horizon length.
const HORIZON_CAP: usize = 40;

/// Root of a sign-bracketed residual.  With `use_secant` a guarded
/// secant step alternates with plain bisection (so the interval provably
/// halves every other evaluation); without it the solve is pure
/// bisection, which is the right tool when the residual plateaus away
/// from the root.  Returns the root once the residual drops below
/// `stop_res` or the interval below `tol_x`; `None` when the evaluation
/// budget runs out first.
fn solve_signed_root(
    f: &mut dyn FnMut(f64) -> f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    stop_res: f64,
    tol_x: f64,
    evals: &mut usize,
    use_secant: bool,
) -> Option<f64> {
    loop {
        if fa.abs() <= stop_res && fa.abs() <= fb.abs() {
            return Some(a);
        }
        if fb.abs() <= stop_res {
            return Some(b);
        }
        if b - a <= tol_x {
            return Some(0.5 * (a + b));
        }
        if *evals >= MAX_EVALS {
            return None;
        }
        let span = b - a;
        let mut c = if use_secant {
            b - fb * span / (fb - fa)
        } else {
            f64::NAN
        };
        if !use_secant
            || *evals % 2 == 1
            || !c.is_finite()
            || c <= a + 0.02 * span
            || c >= b - 0.02 * span
        {
            c = a + 0.5 * span;
        }
        let fc = f(c);
        *evals += 1;
        if fa * fc <= 0.0 {
            b = c;
            fb = fc;
        } else {
            a = c;
            fa = fc;
        }
    }
}

/// Product point of `p` and `q` with its backward chain (depth `n_back`)
/// attached, so the result can seed further leaf tracing.
///
/// Works for any of the systems.  The product point is the root of the
/// leaf-parallel offset between the forward orbits of `p` and of points
/// on `q`'s leaf.  A first root pass runs in the parameter of `q`'s seed
/// chart, whose accuracy is capped by the floating-point resolution of
/// the deep seed segment; a second pass refines along the tangent line
/// at the located point, where the offset of the line from the leaf is
/// quadratically small, and the final correction is carried down the
/// backward chain through the recorded expansion factors so the returned
/// history stays a consistent orbit.
pub fn bracket_point(
    sys: &HyperbolicSystem,
    p: &AttractorPoint,
    q: &AttractorPoint,
    n_back: usize,
) -> Result<AttractorPoint, GeomError> {
    let sep = sys.distance(p.point(), q.point());
    if !(sep < sys.bracket_delta()) {
        return Err(GeomError::BadParameters(format!(
            "product map inputs are {sep:.3e} apart; need separation below {}",
            sys.bracket_delta()
        )));
    }

    // The root sits within `sep < delta` of arc from q, so this reach
    // covers it with slack while keeping every trial point close enough
    // to p's orbit that wrapped displacements stay unambiguous.
    let chart = SeedChart::build(sys, q, n_back, 1.15 * sys.bracket_delta())?;

    // Forward data along p's orbit: points and unstable directions,
    // deep enough that leaf-parallel offsets gain HORIZON_GAIN.
    let mut e = robust_direction(sys, p)?;
    let mut p_orbit = vec![*p.point()];
    let mut dirs = vec![e];
    let mut gain = 1.0;
    while gain < HORIZON_GAIN && p_orbit.len() <= HORIZON_CAP {
        let at = p_orbit[p_orbit.len() - 1];
        let (j, en) = sys.jacobian_along(&at, &e);
        p_orbit.push(sys.apply(&at));
        e = en;
        dirs.push(e);
        gain *= j;
    }
    let m = p_orbit.len() - 1;

    // Leaf-parallel offset between the forward orbits of p and of a
    // trial point, read off at the first step where it escapes a
    // wrap-safe gate (or at the horizon).  It vanishes exactly at the
    // product point, and the escape rule keeps displacements small
    // enough to stay unambiguous on wrapped phase spaces.
    let gate = 0.5 * sys.bracket_delta();
    let offset_from_p = |start: Point| -> f64 {
        let mut r = start;
        let mut u = 0.0;
        for n in 0..=m {
            u = sys.metric_dot(&p_orbit[n], &sys.displacement(&p_orbit[n], &r), &dirs[n]);
            if u.abs() >= gate || n == m {
                break;
            }
            r = sys.apply(&r);
        }
        u
    };

    let mut evals = 0usize;

    // Stage one: root in the chart parameter.
    let a = -chart.half_len;
    let b = chart.half_len;
    let mut res1 = |t: f64| offset_from_p(chart.push_point(sys, t));
    let fa = res1(a);
    let fb = res1(b);
    evals += 2;
    if fa * fb > 0.0 {
        return Err(GeomError::NoBracketConvergence { distance: sep });
    }
    // Sub-quantum tolerance: the seed parameter cannot be resolved more
    // finely than round-off on the seed coordinates anyway.
    let tol1 = (1e-12 * chart.half_len).max(2.5e-16);
    let t1 = solve_signed_root(
        &mut res1,
        a,
        fa,
        b,
        fb,
        1e-10 * gain,
        tol1,
        &mut evals,
        false,
    )
    .ok_or(GeomError::NoBracketConvergence { distance: sep })?;

    // Stage two: refine along the unit tangent line at the located
    // point.  Over the remaining correction the line hugs the leaf to
    // quadratic accuracy, and the parameter now has full floating-point
    // resolution, so the root lands at the rounding floor.  The initial
    // interval covers the stage-one position quantum (round-off times
    // the chart expansion), capped at the product-box scale.
    let chain = chart.push_chain(sys, t1);
    let rc = *chain.points.last().unwrap();
    let ehat = chain.tangent;
    let quant1 = 2.5e-16 * chart.expansion;
    let mut tau = 0.0f64;
    let mut half2 = (4.0 * quant1)
        .max(1e-6)
        .min(0.5 * sys.bracket_delta());
    for _round in 0..2 {
        let mut res2 = |s: f64| offset_from_p(sys.offset(&rc, &(ehat * (tau + s))));
        let mut a2 = -half2;
        let mut b2 = half2;
        let mut f2a = res2(a2);
        let mut f2b = res2(b2);
        evals += 2;
        while f2a * f2b > 0.0 {
            if evals + 2 > MAX_EVALS || b2 > 2.0 * sys.bracket_delta() {
                return Err(GeomError::NoBracketConvergence { distance: sep });
            }
            a2 *= 4.0;
            b2 *= 4.0;
            f2a = res2(a2);
            f2b = res2(b2);
            evals += 2;
        }
        let step = solve_signed_root(
            &mut res2,
            a2,
            f2a,
            b2,
            f2b,
            1e-13 * gain,
            1e-15,
            &mut evals,
            true,
        )
        .ok_or(GeomError::NoBracketConvergence { distance: sep })?;
        tau += step;
        // A second round only pays when the correction is large enough
        // for the line's quadratic deviation from the leaf to matter.
        if step.abs() <= 1e-4 {
            break;
        }
        half2 = (1e-2 * step.abs()).max(1e-8);
    }

    // Carry the tangential correction down the chain: at each level the
    // offset shrinks by that step's expansion factor, so the corrected
    // points remain a consistent backward orbit up to curvature terms
    // quadratic in the (tiny) correction.
    let mut hist = chain.points;
    let top = chart.n_back;
    let mut scale = tau;
    hist[top] = sys.offset(&hist[top], &(chain.dirs[top] * scale));
    for k in (0..top).rev() {
        scale *= (-chain.log_jac[k]).exp();
        hist[k] = sys.offset(&hist[k], &(chain.dirs[k] * scale));
    }
    hist.reverse();
    Ok(AttractorPoint::from_history(hist))
}

/// Product point of `p` and `q` (point only), at a default chart depth.
pub fn bracket(
    sys: &HyperbolicSystem,
    p: &AttractorPoint,
    q: &AttractorPoint,
) -> Result<Point, GeomError> {
    let n_back = sys
        .chart_depth()
        .min(q.depth().max(sys.safe_backward_depth()));
    Ok(*bracket_point(sys, p, q, n_back)?.point())
}

/// Closed-form product point, for the systems that admit one.
///
/// * Toral automorphisms: split `q - p` in the eigenbasis and keep the
///   stable component — exact linear algebra.
/// * Solenoid: the stable set of `p` is the disc slice at `p`'s angle,
///   and the leaf through `q` has an explicit geometric-series
///   parametrisation by angle, so the product point is the series
///   evaluated at `p`'s angle along `q`'s branch itinerary.
///
/// Returns `None` for systems without a closed form.
pub fn bracket_closed_form(sys: &HyperbolicSystem, p: &Point, q: &Point) -> Option<Point> {
    if let Some(t) = sys.as_toral() {
        let d = sys.displacement(p, q);
        let (_, s) = t.uv_coords(&Vector2::new(d.x, d.y));
        let step = Vec3::new(t.e_s.x * s, t.e_s.y * s, 0.0);
        return Some(sys.offset(p, &step));
    }
    if let Some(sol) = sys.as_solenoid() {
        return Some(solenoid_leaf_point_at_angle(sol, q, p.0.z));
    }
    None
}

/// The point of the local unstable leaf through `q` at angle `theta`.
///
/// Unrolling the solenoid map, the disc coordinates of an attractor
/// point are geometric series over its backward angle itinerary:
/// `x = r * sum_k alpha^{k-1} cos(theta_{-k})` and likewise for `y` with
/// `beta` and `sin`.  Points on one leaf share the itinerary's branch
/// choices while the angles follow the halvings of their own angle, so
/// evaluating the series at `theta` with `q`'s branches yields the leaf
/// point exactly (up to series truncation far below round-off).
pub(crate) fn solenoid_leaf_point_at_angle(sol: &Solenoid, q: &Point, theta: f64) -> Point {
    solenoid_leaf_state(sol, q, theta).0
}

/// Leaf point as in [`solenoid_leaf_point_at_angle`] together with the
/// coordinate velocity `(dx/dtheta, dy/dtheta, 1)` of the leaf's
/// parametrisation by angle (the branch angles are `theta / 2^k` up to
/// constants, so the series differentiates term by term).
pub(crate) fn solenoid_leaf_state(sol: &Solenoid, q: &Point, theta: f64) -> (Point, Vec3) {
    // alpha, beta < 1/2, so 60 terms put the truncation below 1e-18.
    const TERMS: usize = 60;
    let mut qk = *q;
    let mut ak = theta.rem_euclid(TAU);
    let mut x = 0.0;
    let mut y = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    let mut cx = sol.r;
    let mut cy = sol.r;
    let mut halving = 0.5;
    for _ in 0..TERMS {
        let qprev = sol.apply_inverse(&qk);
        let h1 = (ak / 2.0).rem_euclid(TAU);
        let h2 = (h1 + PI).rem_euclid(TAU);
        let d1 = wrapped_diff(h1 - qprev.0.z, TAU).abs();
        let d2 = wrapped_diff(h2 - qprev.0.z, TAU).abs();
        ak = if d1 <= d2 { h1 } else { h2 };
        let (s, c) = ak.sin_cos();
        x += cx * c;
        y += cy * s;
        dx -= cx * halving * s;
        dy += cy * halving * c;
        cx *= sol.alpha;
        cy *= sol.beta;
        halving *= 0.5;
        qk = qprev;
    }
    (
        Point::new(x, y, theta.rem_euclid(TAU)),
        Vec3::new(dx, dy, 1.0),
    )
}
