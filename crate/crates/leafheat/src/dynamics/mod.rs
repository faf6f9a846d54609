//! Hyperbolic model systems and orbit-level primitives.
//!
//! Three families are built in:
//!
//! * [`HyperbolicSystem::toral`] — a hyperbolic automorphism of the
//!   2-torus given by an integer matrix with determinant ±1 (the
//!   classical `[[2,1],[1,1]]` map is [`HyperbolicSystem::cat_map`]).
//!   The whole torus is the attractor and the invariant density is
//!   Lebesgue.
//! * [`HyperbolicSystem::solenoid`] — the solid-torus map
//!   `(x, y, θ) ↦ (αx + r cos θ, βy + r sin θ, 2θ)` whose attractor is
//!   the classical expanding solenoid.  Distances are measured through
//!   the standard embedding of the solid torus into ℝ³.
//! * [`HyperbolicSystem::da_map`] — a derived-from-Anosov surgery of
//!   the toral map: the hyperbolic fixed point at the origin is made
//!   repelling by composing with the time-τ map of a radial vector
//!   field supported in a small disc, leaving a genuine (non-total)
//!   attractor.
//!
//! Beyond evaluating the maps and their differentials, this module
//! owns the orbit-level algorithms every other module builds on:
//! sampling attractor points with recorded backward history, power
//! iteration for the unstable direction, leafwise expansion rates and
//! Birkhoff averages of their logarithms.
//!
//! # Backward orbits
//!
//! For a dissipative attractor the inverse map amplifies any
//! transversal deviation from the attractor (for the solenoid by a
//! factor 1/α per step), so deep backward orbits of floating-point
//! points are meaningless if computed by naive backward iteration.
//! All routines that need a backward orbit therefore take a
//! [`BackwardOrbit`]: either an [`AttractorPoint`] whose history was
//! recorded while iterating *forward* (see [`OrbitSampler`]), or a
//! shallow synthesised orbit within [`HyperbolicSystem::safe_backward_depth`].

mod damap;
mod solenoid;
mod toral;

pub use damap::DaMap;
pub use solenoid::Solenoid;
pub use toral::ToralAutomorphism;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ambient coordinate vector.  2-D systems use the first two slots and
/// keep the third exactly zero.
pub type Vec3 = Vector3<f64>;

/// A phase-space point in chart coordinates.
///
/// * toral systems: `(x, y, 0)` with `x, y ∈ [0, 1)`;
/// * solenoid: `(x, y, θ)` with `(x, y)` in the unit disc and
///   `θ ∈ [0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point(pub Vec3);

impl Point {
    /// Build a point from raw chart coordinates.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point(Vector3::new(x, y, z))
    }

    /// Planar constructor for 2-D systems.
    pub fn planar(x: f64, y: f64) -> Self {
        Point(Vector3::new(x, y, 0.0))
    }
}

/// Errors from dynamics-level routines.
#[derive(Debug, Error)]
pub enum DynamicsError {
    /// A parameter is outside its admissible range.
    #[error("invalid system parameter: {0}")]
    InvalidParameter(String),
    /// A backward orbit of the requested depth is not available: the
    /// point carries too little recorded history and synthesising the
    /// orbit by backward iteration would leave the numerically stable
    /// regime.
    #[error("backward orbit of depth {requested} unavailable (recorded history {available}, safe synthesis depth {safe})")]
    InsufficientHistory {
        requested: usize,
        available: usize,
        safe: usize,
    },
    /// The inverse map was evaluated at a point where no preimage
    /// branch lands in the trapping region.
    #[error("no valid inverse branch at ({0:.6}, {1:.6}, {2:.6})")]
    NoInverseBranch(f64, f64, f64),
    /// Power iteration collapsed for every deterministic seed vector.
    #[error("unstable-direction power iteration degenerated")]
    DegenerateDirection,
}

/// Read access to a point together with (part of) its backward orbit.
///
/// `backward(0)` is the point itself and `backward(j)` is its j-th
/// preimage.  Implementations guarantee the orbit is consistent with
/// the forward map to round-off: `f(backward(j+1)) ≈ backward(j)`.
pub trait BackwardOrbit {
    /// The point itself.
    fn point(&self) -> &Point;
    /// `f^{-j}` of the point, if recorded.
    fn backward(&self, j: usize) -> Option<&Point>;
    /// Number of recorded backward steps (`backward(j)` is `Some` for
    /// `j <= depth()`).
    fn depth(&self) -> usize;
}

/// An attractor point that owns a recorded backward orbit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttractorPoint {
    /// Backward orbit; `history[j] = f^{-j}(point)`, `history[0]` is
    /// the point itself.
    history: Vec<Point>,
}

impl AttractorPoint {
    /// Wrap an explicit backward orbit (`history[0]` is the point).
    pub fn from_history(history: Vec<Point>) -> Self {
        assert!(!history.is_empty(), "history must contain the point itself");
        AttractorPoint { history }
    }

    /// A point with no recorded history beyond itself.
    pub fn bare(p: Point) -> Self {
        AttractorPoint { history: vec![p] }
    }

    /// Apply the map `steps` times, growing the recorded history.
    pub fn advance(&mut self, sys: &HyperbolicSystem, steps: usize, window: usize) {
        for _ in 0..steps {
            let next = sys.apply(&self.history[0]);
            self.history.insert(0, next);
            if self.history.len() > window {
                self.history.truncate(window);
            }
        }
    }
}

impl BackwardOrbit for AttractorPoint {
    fn point(&self) -> &Point {
        &self.history[0]
    }
    fn backward(&self, j: usize) -> Option<&Point> {
        self.history.get(j)
    }
    fn depth(&self) -> usize {
        self.history.len() - 1
    }
}

/// Ring buffer of the most recent points of a forward orbit, viewed as
/// the backward orbit of the current point.
#[derive(Clone, Debug)]
struct OrbitRing {
    buf: Vec<Point>,
    head: usize,
    len: usize,
}

impl OrbitRing {
    fn new(capacity: usize, start: Point) -> Self {
        let mut buf = Vec::with_capacity(capacity);
        buf.push(start);
        buf.resize(capacity, start);
        OrbitRing {
            buf,
            head: 0,
            len: 1,
        }
    }

    fn push(&mut self, p: Point) {
        let cap = self.buf.len();
        self.head = (self.head + cap - 1) % cap;
        self.buf[self.head] = p;
        if self.len < cap {
            self.len += 1;
        }
    }

    fn get(&self, j: usize) -> Option<&Point> {
        if j < self.len {
            Some(&self.buf[(self.head + j) % self.buf.len()])
        } else {
            None
        }
    }
}

/// Forward-orbit sampler with recorded backward history.
///
/// Seeds a point in the trapping region from an explicit RNG seed,
/// burns in long enough that the point is on the attractor to
/// round-off, and then walks the orbit, keeping a rolling window of
/// recent iterates so that every emitted sample carries a usable
/// backward orbit.
#[derive(Clone, Debug)]
pub struct OrbitSampler {
    sys: HyperbolicSystem,
    ring: OrbitRing,
}

/// Default burn-in before a seeded point is treated as an attractor
/// point.
pub const BURN_IN: usize = 1_000;

/// Default length of the rolling backward-history window.
pub const HISTORY_WINDOW: usize = 96;

impl OrbitSampler {
    /// Start an orbit from a deterministic seed, burn in and keep a
    /// rolling backward window of `HISTORY_WINDOW` points.
    pub fn new(sys: &HyperbolicSystem, seed: u64) -> Self {
        Self::with_window(sys, seed, HISTORY_WINDOW)
    }

    /// Like [`OrbitSampler::new`] with an explicit window length.
    pub fn with_window(sys: &HyperbolicSystem, seed: u64, window: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = sys.seed_point(&mut rng);
        let mut ring = OrbitRing::new(window.max(2), start);
        let mut current = start;
        for _ in 0..BURN_IN {
            current = sys.apply(&current);
            ring.push(current);
        }
        OrbitSampler {
            sys: sys.clone(),
            ring,
        }
    }

    /// Advance the orbit by one step.
    pub fn step(&mut self) {
        let next = self.sys.apply(self.current());
        self.ring.push(next);
    }

    /// Advance by `n` steps.
    pub fn advance(&mut self, n: usize) {
        for _ in 0..n {
            self.step();
        }
    }

    /// The current orbit point.
    pub fn current(&self) -> &Point {
        self.ring.get(0).expect("ring is never empty")
    }

    /// Snapshot the current point together with its recorded backward
    /// orbit.
    pub fn snapshot(&self) -> AttractorPoint {
        let mut history = Vec::with_capacity(self.ring.len);
        for j in 0..self.ring.len {
            history.push(*self.ring.get(j).unwrap());
        }
        AttractorPoint { history }
    }
}

impl BackwardOrbit for OrbitSampler {
    fn point(&self) -> &Point {
        self.current()
    }
    fn backward(&self, j: usize) -> Option<&Point> {
        self.ring.get(j)
    }
    fn depth(&self) -> usize {
        self.ring.len - 1
    }
}

/// Uniform hyperbolicity constants `(C, λ)`: for unit `v` in the
/// unstable direction at an attractor point, `‖df^{-n} v‖ ≤ C λ^n`,
/// and symmetrically for the stable bundle under forward iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperbolicity {
    /// Multiplicative cushion.
    pub c: f64,
    /// Contraction rate in `(0, 1)`.
    pub lambda: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Kind {
    Toral(ToralAutomorphism),
    Solenoid(Solenoid),
    DaMap(DaMap),
}

/// A uniformly hyperbolic system with a one-dimensional unstable
/// direction, its chart metric, and stored hyperbolicity data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HyperbolicSystem {
    kind: Kind,
    hyp: Hyperbolicity,
    bracket_delta: f64,
    chart_eps: f64,
    safe_backward: usize,
    eu_depth: usize,
}

/// Default power-iteration depth for unstable directions.
pub const DEFAULT_EU_DEPTH: usize = 30;

impl HyperbolicSystem {
    /// The `[[2,1],[1,1]]` toral automorphism.
    pub fn cat_map() -> Self {
        Self::toral([[2, 1], [1, 1]]).expect("cat map is hyperbolic")
    }

    /// A hyperbolic toral automorphism from an integer matrix with
    /// `|det| = 1` and no eigenvalue on the unit circle.
    pub fn toral(m: [[i64; 2]; 2]) -> Result<Self, DynamicsError> {
        let t = ToralAutomorphism::new(m)?;
        // The exact contraction rate is |λ_s|, but a certificate with a
        // very small λ cannot be checked in f64 beyond ~19 steps: each
        // pullback injects ~1 ulp of unstable component, which grows
        // back at rate 1/λ_s.  A mildly slackened λ keeps the stored
        // constants both true and verifiable.
        let lam = t.lambda_s.abs().max(0.4);
        Ok(HyperbolicSystem {
            kind: Kind::Toral(t),
            hyp: Hyperbolicity { c: 4.0, lambda: lam },
            bracket_delta: 0.2,
            chart_eps: 0.25,
            // Backward deviations stay on the torus (the attractor is
            // everything); deep synthesised backward orbits are fine.
            safe_backward: 10_000,
            eu_depth: DEFAULT_EU_DEPTH,
        })
    }

    /// The solid-torus solenoid with default parameters
    /// `r = 0.5, α = β = 0.2`.
    pub fn solenoid_default() -> Self {
        Self::solenoid(0.5, 0.2, 0.2).expect("defaults are admissible")
    }

    /// The solenoid `(x, y, θ) ↦ (αx + r cos θ, βy + r sin θ, 2θ)`;
    /// requires `0 < r < 1` and `0 < α, β < min(r, 1 − r)`.
    pub fn solenoid(r: f64, alpha: f64, beta: f64) -> Result<Self, DynamicsError> {
        let s = Solenoid::new(r, alpha, beta)?;
        // Leaf distances contract backwards at worst by the reciprocal
        // of the minimal leafwise expansion; bound that statically from
        // the embedding geometry and take the worse of it and the disc
        // contraction.
        let lam = s.backward_rate_bound().max(alpha).max(beta);
        Ok(HyperbolicSystem {
            kind: Kind::Solenoid(s),
            hyp: Hyperbolicity { c: 1.5, lambda: lam },
            bracket_delta: 0.3,
            chart_eps: 0.3,
            // Transversal deviations blow up by 1/α per backward step;
            // deeper backward orbits must come from recorded history.
            safe_backward: 12,
            eu_depth: 16,
        })
    }

    /// Derived-from-Anosov surgery of the cat map with default surgery
    /// radius `r0 = 0.15` and the flow time calibrated so the formerly
    /// stable eigenvalue at the origin becomes `1.1`.
    pub fn da_map_default() -> Self {
        let lam_s = (3.0 - 5.0f64.sqrt()) / 2.0;
        Self::da_map(0.15, (1.1f64 / lam_s).ln()).expect("defaults are admissible")
    }

    /// Derived-from-Anosov surgery with explicit surgery radius and
    /// flow time.
    pub fn da_map(r0: f64, tau: f64) -> Result<Self, DynamicsError> {
        let d = DaMap::new(r0, tau)?;
        Ok(HyperbolicSystem {
            kind: Kind::DaMap(d),
            // Contraction is weak near the surgery region (the pushed
            // stable rate approaches 1 at the fixed point): generous
            // constants, validated empirically by the certificate test.
            hyp: Hyperbolicity { c: 4.0, lambda: 0.96 },
            bracket_delta: 0.1,
            chart_eps: 0.15,
            safe_backward: 60,
            eu_depth: 40,
        })
    }

    /// Chart dimension (2 for toral systems, 3 for the solenoid).
    pub fn phase_dim(&self) -> usize {
        match &self.kind {
            Kind::Toral(_) | Kind::DaMap(_) => 2,
            Kind::Solenoid(_) => 3,
        }
    }

    /// Dimension of the unstable bundle (always 1 here).
    pub fn unstable_dim(&self) -> usize {
        1
    }

    /// Stored hyperbolicity constants `(C, λ)`.
    pub fn hyperbolicity(&self) -> Hyperbolicity {
        self.hyp
    }

    /// Scale below which the local product structure (bracket) is
    /// guaranteed to resolve.
    pub fn bracket_delta(&self) -> f64 {
        self.bracket_delta
    }

    /// Localisation scale of local stable/unstable leaves.
    pub fn chart_eps(&self) -> f64 {
        self.chart_eps
    }

    /// Maximal depth to which a backward orbit may be synthesised by
    /// backward iteration without leaving the numerically trustworthy
    /// neighbourhood of the attractor.
    pub fn safe_backward_depth(&self) -> usize {
        self.safe_backward
    }

    /// Default power-iteration depth used internally for unstable
    /// directions.
    pub fn eu_depth(&self) -> usize {
        self.eu_depth
    }

    /// Recommended seed depth for leaf charts: deep enough that backward
    /// contraction flattens seed segments onto the leaf, while the total
    /// forward expansion still leaves the seed parameter resolvable in
    /// f64 (the pushed position quantum is roughly `2.5e-16` times the
    /// expansion over this many steps).
    pub fn chart_depth(&self) -> usize {
        match &self.kind {
            Kind::Toral(_) => 26,
            Kind::Solenoid(_) => 18,
            Kind::DaMap(_) => 26,
        }
    }

    /// The leafwise expansion constant for systems whose differential
    /// acts on the unstable bundle as a constant multiple of an
    /// isometry: `|λ_u|` for toral automorphisms and the doubling rate
    /// 2 for the solenoid (its exact leafwise Lyapunov rate).  `None`
    /// for the surgered map, whose expansion varies over the attractor.
    pub fn conformal_constant(&self) -> Option<f64> {
        match &self.kind {
            Kind::Toral(t) => Some(t.lambda_u.abs()),
            Kind::Solenoid(_) => Some(2.0),
            Kind::DaMap(_) => None,
        }
    }

    /// Apply the map, wrapping back into the canonical chart.
    pub fn apply(&self, p: &Point) -> Point {
        match &self.kind {
            Kind::Toral(t) => t.apply(p),
            Kind::Solenoid(s) => s.apply(p),
            Kind::DaMap(d) => d.apply(p),
        }
    }

    /// Apply the inverse map.  For the solenoid the preimage branch is
    /// selected by membership of the cross-section disc.
    pub fn apply_inverse(&self, p: &Point) -> Point {
        match &self.kind {
            Kind::Toral(t) => t.apply_inverse(p),
            Kind::Solenoid(s) => s.apply_inverse(p),
            Kind::DaMap(d) => d.apply_inverse(p),
        }
    }

    /// Differential of the map at `p`, padded to 3×3 (unused slots are
    /// the identity).
    pub fn differential(&self, p: &Point) -> Matrix3<f64> {
        match &self.kind {
            Kind::Toral(t) => t.differential(),
            Kind::Solenoid(s) => s.differential(p),
            Kind::DaMap(d) => d.differential(p),
        }
    }

    /// Differential of the inverse map at `p` (the inverse matrix of
    /// the differential at the preimage).
    pub fn differential_inverse(&self, p: &Point) -> Matrix3<f64> {
        let pre = self.apply_inverse(p);
        self.differential(&pre)
            .try_inverse()
            .expect("hyperbolic differentials are invertible")
    }

    /// Wrap a raw coordinate vector into the canonical chart.
    pub fn wrap(&self, p: &Point) -> Point {
        match &self.kind {
            Kind::Toral(_) | Kind::DaMap(_) => {
                Point(Vector3::new(fract(p.0.x), fract(p.0.y), 0.0))
            }
            Kind::Solenoid(_) => Point(Vector3::new(
                p.0.x,
                p.0.y,
                p.0.z.rem_euclid(2.0 * std::f64::consts::PI),
            )),
        }
    }

    /// Chart displacement from `a` to `b` (shortest representative for
    /// wrapped coordinates).
    pub fn displacement(&self, a: &Point, b: &Point) -> Vec3 {
        match &self.kind {
            Kind::Toral(_) | Kind::DaMap(_) => Vector3::new(
                wrapped_diff(b.0.x - a.0.x, 1.0),
                wrapped_diff(b.0.y - a.0.y, 1.0),
                0.0,
            ),
            Kind::Solenoid(_) => Vector3::new(
                b.0.x - a.0.x,
                b.0.y - a.0.y,
                wrapped_diff(b.0.z - a.0.z, 2.0 * std::f64::consts::PI),
            ),
        }
    }

    /// Offset a point by a chart tangent vector and wrap.
    pub fn offset(&self, p: &Point, v: &Vec3) -> Point {
        self.wrap(&Point(p.0 + v))
    }

    /// Riemannian inner product of chart tangent vectors at `at`.
    ///
    /// Toral systems carry the flat metric; the solenoid carries the
    /// pullback of the Euclidean metric of ℝ³ under the standard
    /// embedding of the solid torus, which is diagonal
    /// `(1, 1, (R + x)²)` in `(x, y, θ)`.
    pub fn metric_dot(&self, at: &Point, u: &Vec3, v: &Vec3) -> f64 {
        match &self.kind {
            Kind::Toral(_) | Kind::DaMap(_) => u.x * v.x + u.y * v.y,
            Kind::Solenoid(s) => {
                let w = s.embed_radius + at.0.x;
                u.x * v.x + u.y * v.y + w * w * u.z * v.z
            }
        }
    }

    /// Riemannian norm of a chart tangent vector at `at`.
    pub fn tangent_norm(&self, at: &Point, v: &Vec3) -> f64 {
        self.metric_dot(at, v, v).sqrt()
    }

    /// Normalise a tangent vector to unit Riemannian length.
    pub fn normalize_tangent(&self, at: &Point, v: &Vec3) -> Vec3 {
        v / self.tangent_norm(at, v)
    }

    /// Distance between points: flat with wrapping on the torus, the
    /// ℝ³ chord through the standard embedding for the solenoid.
    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        match &self.kind {
            Kind::Toral(_) | Kind::DaMap(_) => self.displacement(a, b).norm(),
            Kind::Solenoid(s) => (s.embed(b) - s.embed(a)).norm(),
        }
    }

    /// A deterministic point of the trapping region drawn from `rng`.
    fn seed_point(&self, rng: &mut ChaCha8Rng) -> Point {
        match &self.kind {
            Kind::Toral(_) | Kind::DaMap(_) => {
                Point::planar(rng.gen::<f64>(), rng.gen::<f64>())
            }
            Kind::Solenoid(_) => Point::new(
                0.0,
                0.0,
                rng.gen::<f64>() * 2.0 * std::f64::consts::PI,
            ),
        }
    }

    /// Synthesise a backward orbit of `depth` steps by backward
    /// iteration.  Fails when `depth` exceeds
    /// [`HyperbolicSystem::safe_backward_depth`].
    pub fn backward_orbit_of(
        &self,
        p: &Point,
        depth: usize,
    ) -> Result<AttractorPoint, DynamicsError> {
        if depth > self.safe_backward {
            return Err(DynamicsError::InsufficientHistory {
                requested: depth,
                available: 0,
                safe: self.safe_backward,
            });
        }
        let mut history = Vec::with_capacity(depth + 1);
        history.push(*p);
        let mut cur = *p;
        for _ in 0..depth {
            cur = self.apply_inverse(&cur);
            history.push(cur);
        }
        Ok(AttractorPoint { history })
    }

    /// Backward orbit of depth `depth`, using recorded history when
    /// available and synthesis otherwise.
    pub(crate) fn backward_points<O: BackwardOrbit + ?Sized>(
        &self,
        orbit: &O,
        depth: usize,
    ) -> Result<Vec<Point>, DynamicsError> {
        if orbit.depth() >= depth {
            Ok((0..=depth).map(|j| *orbit.backward(j).unwrap()).collect())
        } else if depth <= self.safe_backward {
            Ok(self.backward_orbit_of(orbit.point(), depth)?.history)
        } else {
            Err(DynamicsError::InsufficientHistory {
                requested: depth,
                available: orbit.depth(),
                safe: self.safe_backward,
            })
        }
    }

    /// Unit tangent spanning the unstable direction at the orbit's
    /// point, computed by pushing a seed vector forward along `depth`
    /// steps of the backward orbit with renormalisation.
    ///
    /// The result converges to the true unstable direction
    /// geometrically in `depth` (rate: stable-to-unstable multiplier
    /// ratio).  If a seed vector degenerates it is replaced by the
    /// next canonical basis vector, deterministically.
    pub fn unstable_direction<O: BackwardOrbit + ?Sized>(
        &self,
        orbit: &O,
        depth: usize,
    ) -> Result<Vec3, DynamicsError> {
        let pts = self.backward_points(orbit, depth)?;
        let seeds: [Vec3; 4] = [
            Vector3::new(1.0, 0.7, 0.9),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        'seed: for seed in seeds {
            let mut v = self.project_tangent(&seed);
            let n0 = v.norm();
            if n0 == 0.0 {
                continue;
            }
            v /= n0;
            for j in (1..=depth).rev() {
                let at = &pts[j];
                v = self.differential(at) * v;
                let n = self.tangent_norm(&pts[j - 1], &v);
                if !(n > 1e-300) {
                    continue 'seed;
                }
                v /= n;
            }
            let n = self.tangent_norm(&pts[0], &v);
            if n > 1e-8 {
                return Ok(v / n);
            }
        }
        Err(DynamicsError::DegenerateDirection)
    }

    /// Zero the coordinates a 2-D system does not use.
    fn project_tangent(&self, v: &Vec3) -> Vec3 {
        if self.phase_dim() == 2 {
            Vector3::new(v.x, v.y, 0.0)
        } else {
            *v
        }
    }

    /// Leafwise expansion rate at the orbit's point: the Riemannian
    /// norm of the differential applied to the unit unstable direction.
    /// Exceeds 1 everywhere on the attractor for the toral and solenoid
    /// systems; for the surgered map the product over orbits grows, but
    /// single-step values may transiently dip near the surgery region.
    pub fn unstable_jacobian<O: BackwardOrbit + ?Sized>(
        &self,
        orbit: &O,
        depth: usize,
    ) -> Result<f64, DynamicsError> {
        let e = self.unstable_direction(orbit, depth)?;
        Ok(self.jacobian_along(orbit.point(), &e).0)
    }

    /// Push a unit tangent at `p` through the differential; returns the
    /// expansion factor and the normalised image direction (measured at
    /// `f(p)`).
    pub fn jacobian_along(&self, p: &Point, e: &Vec3) -> (f64, Vec3) {
        let fp = self.apply(p);
        let w = self.differential(p) * e;
        let j = self.tangent_norm(&fp, &w);
        (j, w / j)
    }

    /// Birkhoff average of the log leafwise expansion along `n` forward
    /// steps started at the orbit's point: the unstable Lyapunov
    /// exponent estimator.
    pub fn lyapunov_exponent<O: BackwardOrbit + ?Sized>(
        &self,
        orbit: &O,
        n: usize,
    ) -> Result<f64, DynamicsError> {
        assert!(n > 0, "Birkhoff average needs at least one step");
        let mut p = *orbit.point();
        // Use the full power-iteration depth when the orbit's recorded
        // history allows it; otherwise fall back to the largest depth
        // that can be synthesised safely.
        let depth = if orbit.depth() >= self.eu_depth {
            self.eu_depth
        } else {
            self.eu_depth.min(self.safe_backward.max(orbit.depth()))
        };
        let mut e = self.unstable_direction(orbit, depth)?;
        let mut sum = 0.0;
        for _ in 0..n {
            let (j, e_next) = self.jacobian_along(&p, &e);
            sum += j.ln();
            p = self.apply(&p);
            e = e_next;
        }
        Ok(sum / n as f64)
    }

    /// Access the toral data if this is a toral automorphism.
    pub fn as_toral(&self) -> Option<&ToralAutomorphism> {
        match &self.kind {
            Kind::Toral(t) => Some(t),
            _ => None,
        }
    }

    /// Access the solenoid data if this is the solenoid.
    pub fn as_solenoid(&self) -> Option<&Solenoid> {
        match &self.kind {
            Kind::Solenoid(s) => Some(s),
            _ => None,
        }
    }

    /// A short stable name for configs, cache keys and reports.
    pub fn name(&self) -> String {
        match &self.kind {
            Kind::Toral(t) => {
                if t.matrix == [[2, 1], [1, 1]] {
                    "cat-map".to_string()
                } else {
                    format!(
                        "toral[[{},{}],[{},{}]]",
                        t.matrix[0][0], t.matrix[0][1], t.matrix[1][0], t.matrix[1][1]
                    )
                }
            }
            Kind::Solenoid(s) => format!("solenoid(r={},a={},b={})", s.r, s.alpha, s.beta),
            Kind::DaMap(d) => format!("da-map(r0={},tau={})", d.r0, d.tau),
        }
    }
}

/// Fractional part in `[0, 1)`.
pub(crate) fn fract(x: f64) -> f64 {
    let f = x.rem_euclid(1.0);
    // rem_euclid can return exactly 1.0 for tiny negative inputs.
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Shortest representative of `d` modulo `period`.
pub(crate) fn wrapped_diff(d: f64, period: f64) -> f64 {
    let mut w = d.rem_euclid(period);
    if w > period / 2.0 {
        w -= period;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const LAMBDA_U: f64 = 2.618033988749895; // (3 + √5)/2
    const LAMBDA_S: f64 = 0.3819660112501051; // (3 − √5)/2

    #[test]
    fn cat_map_fixes_origin() {
        let sys = HyperbolicSystem::cat_map();
        let p = Point::planar(0.0, 0.0);
        let q = sys.apply(&p);
        assert_eq!(q, p);
    }

    #[test]
    fn cat_map_acts_linearly_mod_one() {
        let sys = HyperbolicSystem::cat_map();
        // Dyadic inputs keep every arithmetic step exact.
        let q = sys.apply(&Point::planar(0.25, 0.375));
        assert_eq!(q.0.x, 0.875);
        assert_eq!(q.0.y, 0.625);
        let r = sys.apply(&Point::planar(0.75, 0.625));
        assert_eq!(r.0.x, 0.125); // 2.125 mod 1
        assert_eq!(r.0.y, 0.375); // 1.375 mod 1
    }

    #[test]
    fn solenoid_doubles_the_angle() {
        let sys = HyperbolicSystem::solenoid_default();
        let p = Point::new(0.1, -0.05, std::f64::consts::FRAC_PI_2);
        let q = sys.apply(&p);
        assert_abs_diff_eq!(q.0.z, std::f64::consts::PI, epsilon = 1e-15);
        assert_abs_diff_eq!(q.0.x, 0.2 * 0.1 + 0.5 * 0.0_f64.max(std::f64::consts::FRAC_PI_2.cos()), epsilon = 1e-12);
    }

    fn inverse_consistency(sys: &HyperbolicSystem, tol: f64) {
        let mut sampler = OrbitSampler::new(sys, 7);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            sampler.advance(3);
            let p = *sampler.current();
            let q = sys.apply_inverse(&sys.apply(&p));
            let r = sys.apply(&sys.apply_inverse(&p));
            worst = worst.max(sys.distance(&p, &q)).max(sys.distance(&p, &r));
        }
        assert!(
            worst < tol,
            "inverse round-trip drifted by {worst:.3e} (tolerance {tol:.1e})"
        );
    }

    #[test]
    fn toral_inverse_consistency() {
        inverse_consistency(&HyperbolicSystem::cat_map(), 1e-12);
    }

    #[test]
    fn solenoid_inverse_consistency() {
        inverse_consistency(&HyperbolicSystem::solenoid_default(), 1e-12);
    }

    #[test]
    fn da_map_inverse_consistency() {
        inverse_consistency(&HyperbolicSystem::da_map_default(), 1e-12);
    }

    #[test]
    fn cat_unstable_direction_is_the_expanding_eigenvector() {
        let sys = HyperbolicSystem::cat_map();
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let ev = Vector3::new(phi, 1.0, 0.0).normalize();
        for depth in [20usize, 30] {
            let ap = sys
                .backward_orbit_of(&Point::planar(0.37, 0.61), depth)
                .unwrap();
            let e = sys.unstable_direction(&ap, depth).unwrap();
            let align = e.dot(&ev).abs();
            assert!(
                align > 1.0 - 1e-12,
                "depth {depth}: alignment {align} with the eigenvector"
            );
        }
    }

    #[test]
    fn cat_unstable_jacobian_is_the_expanding_eigenvalue() {
        let sys = HyperbolicSystem::cat_map();
        let ap = sys
            .backward_orbit_of(&Point::planar(0.12, 0.93), 30)
            .unwrap();
        let j = sys.unstable_jacobian(&ap, 30).unwrap();
        assert_abs_diff_eq!(j, LAMBDA_U, epsilon = 1e-12);
    }

    #[test]
    fn cat_leaf_expansion_is_spatially_constant() {
        let sys = HyperbolicSystem::cat_map();
        let mut sampler = OrbitSampler::new(&sys, 3);
        let mut vals = Vec::new();
        for _ in 0..1000 {
            sampler.step();
            vals.push(sys.unstable_jacobian(&sampler, 30).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(var.sqrt() < 1e-10, "std {} should vanish", var.sqrt());
    }

    #[test]
    fn cat_lyapunov_exponent_matches_log_eigenvalue() {
        let sys = HyperbolicSystem::cat_map();
        let ap = sys
            .backward_orbit_of(&Point::planar(0.2, 0.7), 30)
            .unwrap();
        for n in [1usize, 10, 100] {
            let le = sys.lyapunov_exponent(&ap, n).unwrap();
            assert_abs_diff_eq!(le, LAMBDA_U.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn solenoid_lyapunov_exponent_is_log_two() {
        let sys = HyperbolicSystem::solenoid_default();
        let sampler = OrbitSampler::new(&sys, 11);
        let le = sys.lyapunov_exponent(&sampler, 10_000).unwrap();
        assert!(
            (le - 2.0f64.ln()).abs() < 0.01,
            "Birkhoff exponent {le} vs log 2 = {}",
            2.0f64.ln()
        );
    }

    #[test]
    fn equivariance_residual_decays_geometrically() {
        // The angle between the depth-n direction at f(x) and the
        // pushforward of the depth-n direction at x decays at the
        // stable/unstable multiplier ratio; the fitted per-step ratio
        // must not exceed the stored λ.
        for sys in [
            HyperbolicSystem::cat_map(),
            HyperbolicSystem::solenoid_default(),
            HyperbolicSystem::da_map_default(),
        ] {
            let mut sampler = OrbitSampler::new(&sys, 5);
            sampler.advance(17);
            let x = sampler.snapshot();
            let mut fx = x.clone();
            fx.advance(&sys, 1, HISTORY_WINDOW);
            let residual = |n: usize| -> f64 {
                let ex = sys.unstable_direction(&x, n).unwrap();
                let (_, pushed) = sys.jacobian_along(x.point(), &ex);
                let efx = sys.unstable_direction(&fx, n).unwrap();
                let c = sys
                    .metric_dot(fx.point(), &pushed, &efx)
                    .abs()
                    .min(1.0);
                (1.0 - c * c).sqrt() // sine of the angle
            };
            let r5 = residual(5).max(1e-17);
            let r10 = residual(10).max(1e-17);
            let ratio = (r10 / r5).powf(1.0 / 5.0);
            let lam = sys.hyperbolicity().lambda;
            assert!(
                ratio < lam + 0.05 || r10 < 1e-13,
                "{}: fitted ratio {ratio} exceeds λ = {lam} (r5={r5:.2e}, r10={r10:.2e})",
                sys.name()
            );
        }
    }

    #[test]
    fn hyperbolicity_certificate_holds_on_samples() {
        // ‖df^{-n} v‖ ≤ C λ^n for unit unstable v, n ≤ 20.
        for sys in [
            HyperbolicSystem::cat_map(),
            HyperbolicSystem::solenoid_default(),
            HyperbolicSystem::da_map_default(),
        ] {
            let hyp = sys.hyperbolicity();
            let mut sampler = OrbitSampler::with_window(&sys, 23, 96);
            for _ in 0..20 {
                sampler.advance(13);
                let depth = 20usize;
                let pts = sys.backward_points(&sampler, depth).unwrap();
                // Unit unstable vector at the current point, pulled
                // backwards through the inverse differentials.
                let mut v = sys.unstable_direction(&sampler, sampler.depth().min(40)).unwrap();
                for (n, win) in pts.windows(2).enumerate() {
                    let d = sys.differential(&win[1]);
                    let dinv = d.try_inverse().unwrap();
                    v = dinv * v;
                    let norm = sys.tangent_norm(&win[1], &v);
                    let bound = hyp.c * hyp.lambda.powi(n as i32 + 1);
                    assert!(
                        norm <= bound,
                        "{}: ‖df^{{-{}}} v‖ = {norm:.3e} exceeds Cλ^n = {bound:.3e}",
                        sys.name(),
                        n + 1
                    );
                }
            }
        }
    }

    #[test]
    fn solenoid_rejects_bad_parameters() {
        assert!(HyperbolicSystem::solenoid(1.2, 0.1, 0.1).is_err());
        assert!(HyperbolicSystem::solenoid(0.5, 0.6, 0.1).is_err());
        assert!(HyperbolicSystem::solenoid(0.5, 0.1, -0.1).is_err());
    }

    #[test]
    fn toral_rejects_non_hyperbolic_matrices() {
        assert!(HyperbolicSystem::toral([[1, 0], [0, 1]]).is_err()); // identity
        assert!(HyperbolicSystem::toral([[2, 0], [0, 2]]).is_err()); // |det| ≠ 1
        assert!(HyperbolicSystem::toral([[0, -1], [1, 0]]).is_err()); // rotation
    }

    #[test]
    fn solenoid_pointwise_expansion_stays_above_one() {
        let sys = HyperbolicSystem::solenoid_default();
        let mut sampler = OrbitSampler::new(&sys, 19);
        let mut amin = f64::INFINITY;
        let mut amax = 0.0f64;
        for _ in 0..2000 {
            sampler.step();
            let a = sys.unstable_jacobian(&sampler, 16).unwrap();
            amin = amin.min(a);
            amax = amax.max(a);
        }
        assert!(amin > 1.0, "minimal leaf expansion {amin} must exceed 1");
        assert!(amax < 4.0, "maximal leaf expansion {amax} looks wrong");
    }

    #[test]
    fn lyapunov_single_step_equals_log_jacobian() {
        let sys = HyperbolicSystem::solenoid_default();
        let sampler = OrbitSampler::new(&sys, 2);
        let le = sys.lyapunov_exponent(&sampler, 1).unwrap();
        let j = sys.unstable_jacobian(&sampler, 16).unwrap();
        assert_abs_diff_eq!(le, j.ln(), epsilon = 1e-9);
    }

    #[test]
    fn backward_orbit_depth_guard_fires() {
        let sys = HyperbolicSystem::solenoid_default();
        let p = Point::new(0.0, 0.0, 1.0);
        assert!(sys.backward_orbit_of(&p, 40).is_err());
        assert!(sys.backward_orbit_of(&p, 5).is_ok());
    }

    #[test]
    fn stable_rate_constant_matches_eigenvalue() {
        assert_abs_diff_eq!(LAMBDA_S, 1.0 / LAMBDA_U, epsilon = 1e-15);
    }
}
