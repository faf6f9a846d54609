//! Discrete heat-semigroup machinery on the unstable lamination of
//! uniformly hyperbolic attractors.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dynamics`] — the smooth systems themselves (a hyperbolic toral
//!   automorphism, the solid-torus solenoid, and a derived-from-Anosov
//!   surgery of the toral map), together with orbit sampling, unstable
//!   directions and leafwise expansion rates.
//! * [`leafgeom`] — local unstable leaf segments traced to arc-length
//!   parametrisation, local product coordinates (bracket / stable
//!   projection) and rectangles: bundles of leaves over a stable
//!   transversal.
//! * [`srb`] — leaf-conditional densities of the physical invariant
//!   measure obtained from backward Jacobian products, with certified
//!   distortion bounds, plus Monte-Carlo estimation of the transversal
//!   (quotient) weights.
//! * [`dirichlet`] — the weighted leafwise energy form, its graph
//!   Laplacian and spectral heat operator, domain restrictions,
//!   intrinsic distances, short-time diagnostics and pullback /
//!   quasi-invariance reports.
//! * [`stochastic`] — the continuous-time Markov jump process attached
//!   to the discrete generator, with reproducible per-path RNG streams.
//!
//! All floating-point state lives in plain `f64`; every randomised
//! routine takes an explicit seed so that outputs are reproducible
//! bit-for-bit.

pub mod dirichlet;
pub mod dynamics;
pub mod leafgeom;
pub mod srb;
pub mod stochastic;

/// Crate version, for embedding in emitted artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use dynamics::{AttractorPoint, HyperbolicSystem, Point};
pub use leafgeom::{LeafSegment, Rectangle};
pub use srb::{DistortionConstants, SrbLeafDensity, SrbTable};
