//! Node grid bookkeeping, the discrete measure and energy form, the
//! leafwise gradient, and the generator built from them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DirichletError;
use crate::leafgeom::Rectangle;
use crate::srb::SrbTable;

/// Index bookkeeping for node functions over a family of leaves: leaf
/// blocks are concatenated into one global index space, nodes in arc
/// order within each block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    starts: Vec<f64>,
    total: usize,
    h: f64,
}

impl Layout {
    /// A layout with the given per-leaf node counts and spacing; arcs
    /// are centred, running from `-(m-1)h/2` to `(m-1)h/2` on each
    /// leaf.
    pub fn new(sizes: Vec<usize>, h: f64) -> Self {
        assert!(h > 0.0, "spacing must be positive");
        assert!(!sizes.is_empty(), "need at least one leaf");
        let starts = sizes
            .iter()
            .map(|&m| -0.5 * (m.saturating_sub(1)) as f64 * h)
            .collect();
        Self::with_starts(sizes, starts, h)
    }

    fn with_starts(sizes: Vec<usize>, starts: Vec<f64>, h: f64) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for &m in &sizes {
            offsets.push(total);
            total += m;
        }
        Layout {
            sizes,
            offsets,
            starts,
            total,
            h,
        }
    }

    /// The layout of a rectangle's node grid.
    pub fn of(rect: &Rectangle) -> Self {
        let sizes: Vec<usize> = rect.leaves().iter().map(|l| l.node_count()).collect();
        let starts = rect.leaves().iter().map(|l| l.arcs()[0]).collect();
        Self::with_starts(sizes, starts, rect.spacing())
    }

    pub fn leaf_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size(&self, leaf: usize) -> usize {
        self.sizes[leaf]
    }

    pub fn offset(&self, leaf: usize) -> usize {
        self.offsets[leaf]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Global index of node `i` on leaf `j`.
    pub fn global(&self, leaf: usize, node: usize) -> usize {
        debug_assert!(node < self.sizes[leaf]);
        self.offsets[leaf] + node
    }

    /// Leaf and within-leaf node of a global index.
    pub fn split(&self, g: usize) -> (usize, usize) {
        debug_assert!(g < self.total);
        let leaf = match self.offsets.binary_search(&g) {
            Ok(j) => j,
            Err(j) => j - 1,
        };
        (leaf, g - self.offsets[leaf])
    }

    /// Arc coordinate of node `i` on leaf `j`.
    pub fn arc(&self, leaf: usize, node: usize) -> f64 {
        self.starts[leaf] + node as f64 * self.h
    }

    pub(super) fn check_len(&self, u: &[f64]) -> Result<(), DirichletError> {
        if u.len() != self.total {
            return Err(DirichletError::LengthMismatch {
                expected: self.total,
                got: u.len(),
            });
        }
        Ok(())
    }
}

/// Diagonal node measure: mass `w_j * density_{j,i} * h` at node
/// `(j, i)`, with the half-cell correction at leaf endpoints so that
/// the total is the weighted trapezoid integral of the densities —
/// exactly one after the final normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    layout: Layout,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Wraps raw masses; they must be positive and are normalised to
    /// unit total.
    pub fn new(layout: Layout, mut masses: Vec<f64>) -> Result<Self, DirichletError> {
        layout.check_len(&masses)?;
        for (i, &m) in masses.iter().enumerate() {
            if !(m > 0.0) {
                return Err(DirichletError::NonpositiveMass { node: i });
            }
        }
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        Ok(DiscreteMeasure { layout, masses })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn mass(&self, node: usize) -> f64 {
        self.masses[node]
    }

    /// Total mass (one after construction, up to rounding).
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `∫ u dμ`.
    pub fn integral(&self, u: &[f64]) -> f64 {
        self.masses.iter().zip(u).map(|(m, x)| m * x).sum()
    }

    /// `⟨u, v⟩_M`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.masses
            .iter()
            .zip(u)
            .zip(v)
            .map(|((m, x), y)| m * x * y)
            .sum()
    }

    /// Mass of a set of nodes.
    pub fn mass_of(&self, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&i| self.masses[i]).sum()
    }
}

/// The energy form: one conductance `w_j * density_mid / h` per
/// within-leaf edge, density at the edge midpoint taken as the average
/// of the endpoint densities.  There are no edges between leaves, so
/// the form is a direct sum of per-leaf tridiagonal blocks and its
/// kernel on each block is exactly the constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteForm {
    layout: Layout,
    cond: Vec<Vec<f64>>,
}

impl DiscreteForm {
    /// Wraps per-leaf edge conductances (`sizes[j] - 1` per leaf); all
    /// must be positive.
    pub fn new(layout: Layout, cond: Vec<Vec<f64>>) -> Result<Self, DirichletError> {
        assert_eq!(cond.len(), layout.leaf_count(), "one edge list per leaf");
        for (j, edges) in cond.iter().enumerate() {
            assert_eq!(
                edges.len(),
                layout.size(j).saturating_sub(1),
                "edge count must match node count on leaf {j}"
            );
            if let Some(k) = edges.iter().position(|c| !(*c > 0.0)) {
                return Err(DirichletError::NonpositiveMass {
                    node: layout.global(j, k),
                });
            }
        }
        Ok(DiscreteForm { layout, cond })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Conductances of leaf `j`'s edges, in arc order.
    pub fn conductances(&self, leaf: usize) -> &[f64] {
        &self.cond[leaf]
    }

    /// `E(u, v) = Σ_edges c (u_+ - u_-)(v_+ - v_-)`, accumulated leaf
    /// by leaf so the total is exactly the sum of per-leaf energies.
    pub fn energy_pair(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..self.layout.leaf_count() {
            total += self.leaf_energy_pair(j, u, v);
        }
        total
    }

    /// The quadratic form `E(u) = E(u, u)`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.energy_pair(u, u)
    }

    /// Leaf `j`'s block of `E(u, v)`.
    pub fn leaf_energy_pair(&self, leaf: usize, u: &[f64], v: &[f64]) -> f64 {
        let o = self.layout.offset(leaf);
        let mut acc = 0.0;
        for (k, &c) in self.cond[leaf].iter().enumerate() {
            let du = u[o + k + 1] - u[o + k];
            let dv = v[o + k + 1] - v[o + k];
            acc += c * du * dv;
        }
        acc
    }

    /// Stiffness action `(A u)_i = Σ_edges at i c (u_i - u_other)`,
    /// accumulated edge-wise so constants map to exact zeros.
    pub fn stiffness_apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.total()];
        for j in 0..self.layout.leaf_count() {
            let o = self.layout.offset(j);
            for (k, &c) in self.cond[j].iter().enumerate() {
                let a = o + k;
                let b = o + k + 1;
                let d = c * (u[a] - u[b]);
                out[a] += d;
                out[b] -= d;
            }
        }
        out
    }

    /// The same form with every conductance scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> DiscreteForm {
        assert!(factor > 0.0, "scale factor must be positive");
        DiscreteForm {
            layout: self.layout.clone(),
            cond: self
                .cond
                .iter()
                .map(|edges| edges.iter().map(|c| c * factor).collect())
                .collect(),
        }
    }
}

/// Builds the measure and form of a rectangle from its density table:
/// node masses `w_j ϱ_{j,i} h` (half cells at endpoints) and edge
/// conductances `w_j (ϱ_{j,i} + ϱ_{j,i+1}) / (2h)`.
///
/// Fails if the table does not provide a density for every leaf with
/// matching node counts, or a weight per leaf.
pub fn assemble(
    rect: &Rectangle,
    table: &SrbTable,
) -> Result<(DiscreteForm, DiscreteMeasure), DirichletError> {
    let layout = Layout::of(rect);
    if table.weights.len() != layout.leaf_count() {
        return Err(DirichletError::MissingDensity {
            leaf: table.weights.len().min(layout.leaf_count()),
            reason: format!(
                "{} weights for {} leaves",
                table.weights.len(),
                layout.leaf_count()
            ),
        });
    }
    let h = layout.spacing();
    let mut masses = Vec::with_capacity(layout.total());
    let mut cond = Vec::with_capacity(layout.leaf_count());
    for j in 0..layout.leaf_count() {
        let density = table.densities.get(j).ok_or(DirichletError::MissingDensity {
            leaf: j,
            reason: "no density recorded".into(),
        })?;
        let rho = &density.normalized;
        let m = layout.size(j);
        if rho.len() != m {
            return Err(DirichletError::MissingDensity {
                leaf: j,
                reason: format!("density has {} nodes, leaf has {m}", rho.len()),
            });
        }
        let w = table.weights[j];
        if !(w > 0.0) {
            return Err(DirichletError::MissingDensity {
                leaf: j,
                reason: format!("nonpositive weight {w}"),
            });
        }
        for (i, &r) in rho.iter().enumerate() {
            let cell = if i == 0 || i == m - 1 { 0.5 * h } else { h };
            masses.push(w * r * cell);
        }
        cond.push(
            rho.windows(2)
                .map(|pair| w * 0.5 * (pair[0] + pair[1]) / h)
                .collect(),
        );
    }
    let form = DiscreteForm::new(layout.clone(), cond)?;
    let measure = DiscreteMeasure::new(layout, masses)?;
    Ok((form, measure))
}

/// Within-leaf derivative of a node function on an explicit layout:
/// central differences at interior nodes, one-sided second-order
/// stencils at leaf endpoints, and no transversal differencing ever.
pub fn gradient_on(layout: &Layout, u: &[f64]) -> Result<Vec<f64>, DirichletError> {
    layout.check_len(u)?;
    let h = layout.spacing();
    let mut out = vec![0.0; layout.total()];
    for j in 0..layout.leaf_count() {
        let m = layout.size(j);
        if m < 3 {
            return Err(DirichletError::LeafTooShort { leaf: j, nodes: m });
        }
        let o = layout.offset(j);
        // One-sided stencils in difference form, so constants yield
        // exact zeros.
        out[o] =
            (4.0 * (u[o + 1] - u[o]) - (u[o + 2] - u[o])) / (2.0 * h);
        for i in 1..m - 1 {
            out[o + i] = (u[o + i + 1] - u[o + i - 1]) / (2.0 * h);
        }
        out[o + m - 1] = (4.0 * (u[o + m - 1] - u[o + m - 2])
            - (u[o + m - 1] - u[o + m - 3]))
            / (2.0 * h);
    }
    Ok(out)
}

/// [`gradient_on`] over a rectangle's grid.
pub fn leafwise_gradient(u: &[f64], rect: &Rectangle) -> Result<Vec<f64>, DirichletError> {
    gradient_on(&Layout::of(rect), u)
}

/// Squared leafwise gradient per node.  Its measure integral
/// reproduces the assembled energy up to the difference between nodal
/// and midpoint quadrature, which is second order in the spacing.
pub fn carre_du_champ(u: &[f64], rect: &Rectangle) -> Result<Vec<f64>, DirichletError> {
    let mut g = leafwise_gradient(u, rect)?;
    for v in &mut g {
        *v *= *v;
    }
    Ok(g)
}

/// Bilinear carré du champ: the product of the leafwise gradients of
/// `u` and `v` per node.
pub fn carre_du_champ_pair(
    u: &[f64],
    v: &[f64],
    rect: &Rectangle,
) -> Result<Vec<f64>, DirichletError> {
    let layout = Layout::of(rect);
    let gu = gradient_on(&layout, u)?;
    let gv = gradient_on(&layout, v)?;
    Ok(gu.iter().zip(&gv).map(|(a, b)| a * b).collect())
}

/// The generator `L = -M^{-1} A`: a Markov generator whose action is
/// accumulated edge-wise, so constants are annihilated exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Laplacian {
    layout: Layout,
    cond: Vec<Vec<f64>>,
    masses: Vec<f64>,
}

impl Laplacian {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub(crate) fn edge_conductances(&self) -> &[Vec<f64>] {
        &self.cond
    }

    /// `(L u)_i = (1/m_i) Σ_{edges at i} c (u_other - u_i)`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>, DirichletError> {
        self.layout.check_len(u)?;
        let mut out = vec![0.0; self.layout.total()];
        for j in 0..self.layout.leaf_count() {
            let o = self.layout.offset(j);
            for (k, &c) in self.cond[j].iter().enumerate() {
                let a = o + k;
                let b = o + k + 1;
                out[a] += c * (u[b] - u[a]) / self.masses[a];
                out[b] += c * (u[a] - u[b]) / self.masses[b];
            }
        }
        Ok(out)
    }

    /// Dense matrix of the generator, for small-grid comparisons.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.layout.total();
        let mut mat = DMatrix::zeros(n, n);
        for j in 0..self.layout.leaf_count() {
            let o = self.layout.offset(j);
            for (k, &c) in self.cond[j].iter().enumerate() {
                let a = o + k;
                let b = o + k + 1;
                mat[(a, b)] += c / self.masses[a];
                mat[(a, a)] -= c / self.masses[a];
                mat[(b, a)] += c / self.masses[b];
                mat[(b, b)] -= c / self.masses[b];
            }
        }
        mat
    }

    /// Row-sup norm `max_i Σ_j |L_ij|`, a cheap spectral bound used to
    /// pick stable sub-steps for series evaluation of the heat flow.
    pub fn sup_norm(&self) -> f64 {
        let mut row_abs = vec![0.0f64; self.layout.total()];
        for j in 0..self.layout.leaf_count() {
            let o = self.layout.offset(j);
            for (k, &c) in self.cond[j].iter().enumerate() {
                let a = o + k;
                let b = o + k + 1;
                row_abs[a] += 2.0 * c / self.masses[a];
                row_abs[b] += 2.0 * c / self.masses[b];
            }
        }
        row_abs.into_iter().fold(0.0, f64::max)
    }
}

/// The generator of the heat flow associated with an assembled pair.
/// Self-adjoint in `⟨·,·⟩_M`, annihilates constants, has nonnegative
/// off-diagonal entries, and satisfies the mass-balance identity
/// `1ᵀ M L = 0` (the measure is invariant).
pub fn laplacian(
    form: &DiscreteForm,
    measure: &DiscreteMeasure,
) -> Result<Laplacian, DirichletError> {
    assert_eq!(
        form.layout(),
        measure.layout(),
        "form and measure must share a grid"
    );
    Ok(Laplacian {
        layout: form.layout.clone(),
        cond: form.cond.clone(),
        masses: measure.masses.clone(),
    })
}
