//! The weighted leafwise energy form over a rectangle's node grid, and
//! everything generated by it: node measures, conductances, Laplacians,
//! heat semigroups, carré du champ, intrinsic distance, short-time heat
//! asymptotics, the behaviour of energies under the dynamics, and
//! Dirichlet restrictions.
//!
//! All differencing is *within* leaves: the form decomposes into
//! independent per-leaf blocks joined only through the quotient weights
//! that scale each block.  Functions constant on every leaf therefore
//! carry zero energy no matter how wildly they jump between leaves, the
//! heat flow never leaks mass across leaves, and the induced intrinsic
//! distance between sets on disjoint leaf families is infinite.
//!
//! Node functions are flat `Vec<f64>`s over a [`Layout`]: leaves are
//! concatenated in rectangle order, nodes in arc order within each
//! leaf.

mod distance;
mod domain;
mod grid;
mod heat;
mod quasi;

#[cfg(test)]
pub(crate) use grid::testgrid;

pub use distance::{
    heat_mass_between, intrinsic_distance, varadhan_check, VaradhanRow, VaradhanTable,
};
pub use domain::{
    dirichlet_domain, superharmonic_test, zero_energy_indicator, DirichletDomain,
};
pub use grid::{
    assemble, carre_du_champ, carre_du_champ_pair, gradient_on, laplacian, leafwise_gradient,
    DiscreteForm, DiscreteMeasure, Laplacian, Layout,
};
pub use heat::{heat, heat_expm, variational_energy, HeatOperator};
pub use quasi::{pullback, quasi_invariance_report, QuasiInvarianceReport};

use thiserror::Error;

/// Errors raised while assembling or applying the discrete structures.
#[derive(Debug, Error)]
pub enum DirichletError {
    /// An underlying geometric query failed.
    #[error(transparent)]
    Geometry(#[from] crate::leafgeom::GeomError),
    /// A node function has the wrong length for the grid.
    #[error("node function has {got} entries, the grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    /// A leaf is too short for the requested stencil.
    #[error("leaf {leaf} has {nodes} nodes, need at least 3")]
    LeafTooShort { leaf: usize, nodes: usize },
    /// The density table does not cover the rectangle.
    #[error("density table does not cover leaf {leaf}: {reason}")]
    MissingDensity { leaf: usize, reason: String },
    /// A mass or conductance required to be positive was not.
    #[error("nonpositive mass or conductance at node {node}")]
    NonpositiveMass { node: usize },
    /// Heat flow is only defined forward in time.
    #[error("negative time {t}")]
    NegativeTime { t: f64 },
    /// A node set that must be nonempty was empty.
    #[error("empty node set")]
    EmptySet,
    /// Two node sets that must be disjoint share a node.
    #[error("node sets share node {node}")]
    SetsIntersect { node: usize },
    /// The intrinsic distance is infinite, so no finite-scale
    /// asymptotics exist.
    #[error("the sets lie on disjoint leaf families: intrinsic distance is infinite")]
    InfiniteDistance,
    /// A pulled-back node left the covered rectangle.
    #[error("image of node {node} at ({x:.6}, {y:.6}, {z:.6}) is not covered by the rectangle")]
    Uncovered { node: usize, x: f64, y: f64, z: f64 },
    /// The rectangle's recorded backward depth cannot support the
    /// requested number of steps.
    #[error("need backward depth {needed}, the rectangle records {available}")]
    DepthTooShallow { needed: usize, available: usize },
    /// A leaf subset was empty or referenced leaves outside the
    /// rectangle.
    #[error("invalid leaf subset: {0}")]
    InvalidLeafSubset(String),
    /// A restricted domain has no interior nodes.
    #[error("the node set has no interior nodes on any leaf")]
    EmptyInterior,
    /// A node index fell outside the grid.
    #[error("node index {node} outside a grid of {total} nodes")]
    NodeOutOfRange { node: usize, total: usize },
    /// The system's leafwise expansion is not a constant multiple of an
    /// isometry, so no single rescaling constant exists.
    #[error("system {system} has no leafwise conformal constant")]
    NotConformal { system: String },
}
