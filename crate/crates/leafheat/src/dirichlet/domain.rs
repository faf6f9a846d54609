//! Superharmonicity on node sets, leaf indicators with no energy, and
//! the absorbing restriction of the heat flow to a node set.

use nalgebra::DMatrix;

use super::grid::{DiscreteForm, DiscreteMeasure, Layout};
use super::DirichletError;
use crate::leafgeom::Rectangle;

/// Whether `φ` pairs nonnegatively with every interior node basis
/// function of `O`: `E(φ, e_i) ≥ -1e-12` at each node of `O` whose
/// within-leaf neighbours both belong to `O`.  Nonnegative functions
/// supported inside `O` are positive combinations of those `e_i`, so
/// this suffices.  Vacuously true when `O` has no interior node.
pub fn superharmonic_test(
    form: &DiscreteForm,
    phi: &[f64],
    o: &[usize],
) -> Result<bool, DirichletError> {
    let layout = form.layout();
    layout.check_len(phi)?;
    let mask = kept_mask(layout, o)?;
    let pairing = form.stiffness_apply(phi);
    for &g in o {
        if is_interior(layout, &mask, g) && pairing[g] < -1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The indicator of a union of whole leaves: constant on each leaf, so
/// it carries no energy at all, yet it separates the selected leaves
/// from the rest whenever the selection is proper.
pub fn zero_energy_indicator(
    rect: &Rectangle,
    leaf_subset: &[usize],
) -> Result<Vec<f64>, DirichletError> {
    if leaf_subset.is_empty() {
        return Err(DirichletError::InvalidLeafSubset(
            "no leaves selected".into(),
        ));
    }
    let layout = Layout::of(rect);
    let count = layout.leaf_count();
    let mut pick = vec![false; count];
    for &j in leaf_subset {
        if j >= count {
            return Err(DirichletError::InvalidLeafSubset(format!(
                "leaf index {j} out of range ({count} leaves)"
            )));
        }
        pick[j] = true;
    }
    let mut out = vec![0.0; layout.total()];
    for j in 0..count {
        if pick[j] {
            for i in 0..layout.size(j) {
                out[layout.global(j, i)] = 1.0;
            }
        }
    }
    Ok(out)
}

/// One eigensolved block of a restricted flow: a set of kept nodes on
/// one leaf together with the spectral data of the principal submatrix
/// over them.
#[derive(Clone, Debug)]
struct RestrictedBlock {
    nodes: Vec<usize>,
    evals: Vec<f64>,
    evecs: DMatrix<f64>,
    sqrt_m: Vec<f64>,
}

/// The heat flow absorbed outside a node set `O`, built two ways: from
/// the restriction of the assembled form (`heat_global`) and leaf by
/// leaf from each leaf's own restricted form (`heat_leafwise`).  The
/// leafwise flow dominates the global one entrywise; with no edges
/// between leaves the two coincide to round-off.
#[derive(Clone, Debug)]
pub struct DirichletDomain {
    layout: Layout,
    kept: Vec<usize>,
    global_blocks: Vec<RestrictedBlock>,
    leaf_blocks: Vec<RestrictedBlock>,
}

/// Restricts the flow of `form` to `O` with absorption outside it:
/// the generator becomes the principal submatrix over `O`, which kills
/// mass at every edge crossing out of `O`.
///
/// `O` must contain at least one interior node (a node with both leaf
/// neighbours in `O`) — otherwise nothing diffuses and the restriction
/// is degenerate.
pub fn dirichlet_domain(
    form: &DiscreteForm,
    measure: &DiscreteMeasure,
    o: &[usize],
) -> Result<DirichletDomain, DirichletError> {
    assert_eq!(
        form.layout(),
        measure.layout(),
        "form and measure live on different grids"
    );
    let layout = form.layout().clone();
    if o.is_empty() {
        return Err(DirichletError::EmptySet);
    }
    let mask = kept_mask(&layout, o)?;
    let mut kept: Vec<usize> = o.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if !kept.iter().any(|&g| is_interior(&layout, &mask, g)) {
        return Err(DirichletError::EmptyInterior);
    }

    // Global path: maximal runs of consecutive kept nodes, each a
    // tridiagonal principal block read straight off the conductance
    // list.  The diagonal keeps every incident edge of the full leaf,
    // including edges to removed neighbours — that is the absorption.
    let mut global_blocks = Vec::new();
    for j in 0..layout.leaf_count() {
        let m = layout.size(j);
        let cond = form.conductances(j);
        let mut i = 0;
        while i < m {
            if !mask[layout.global(j, i)] {
                i += 1;
                continue;
            }
            let lo = i;
            while i + 1 < m && mask[layout.global(j, i + 1)] {
                i += 1;
            }
            let hi = i;
            i += 1;
            let n = hi - lo + 1;
            let nodes: Vec<usize> = (lo..=hi).map(|k| layout.global(j, k)).collect();
            let sqrt_m: Vec<f64> = nodes.iter().map(|&g| measure.mass(g).sqrt()).collect();
            let mut b = DMatrix::<f64>::zeros(n, n);
            for (slot, k) in (lo..=hi).enumerate() {
                let mut diag = 0.0;
                if k > 0 {
                    diag += cond[k - 1];
                }
                if k + 1 < m {
                    diag += cond[k];
                }
                b[(slot, slot)] = diag / (sqrt_m[slot] * sqrt_m[slot]);
                if slot + 1 < n {
                    let off = -cond[k] / (sqrt_m[slot] * sqrt_m[slot + 1]);
                    b[(slot, slot + 1)] = off;
                    b[(slot + 1, slot)] = off;
                }
            }
            let whole_leaf = n == m;
            global_blocks.push(solve_block(nodes, b, sqrt_m, whole_leaf));
        }
    }

    // Leafwise path: each leaf's full Neumann stiffness as a dense
    // matrix, then the principal submatrix over that leaf's kept nodes
    // extracted and solved in one piece.
    let mut leaf_blocks = Vec::new();
    for j in 0..layout.leaf_count() {
        let m = layout.size(j);
        let locals: Vec<usize> = (0..m)
            .filter(|&k| mask[layout.global(j, k)])
            .collect();
        if locals.is_empty() {
            continue;
        }
        let cond = form.conductances(j);
        let mut full = DMatrix::<f64>::zeros(m, m);
        for (k, &c) in cond.iter().enumerate() {
            full[(k, k)] += c;
            full[(k + 1, k + 1)] += c;
            full[(k, k + 1)] -= c;
            full[(k + 1, k)] -= c;
        }
        let sub = full.select_rows(locals.iter()).select_columns(locals.iter());
        let nodes: Vec<usize> = locals.iter().map(|&k| layout.global(j, k)).collect();
        let sqrt_m: Vec<f64> = nodes.iter().map(|&g| measure.mass(g).sqrt()).collect();
        let n = nodes.len();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                b[(r, c)] = sub[(r, c)] / (sqrt_m[r] * sqrt_m[c]);
            }
        }
        leaf_blocks.push(solve_block(nodes, b, sqrt_m, n == m));
    }

    Ok(DirichletDomain {
        layout,
        kept,
        global_blocks,
        leaf_blocks,
    })
}

impl DirichletDomain {
    /// The retained nodes, sorted.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    /// `e^{t L^O} u` for the restriction of the assembled form, zero
    /// off `O`.
    pub fn heat_global(&self, t: f64, u: &[f64]) -> Result<Vec<f64>, DirichletError> {
        self.run(&self.global_blocks, t, u)
    }

    /// The leaf-by-leaf restricted flow, zero off `O`.
    pub fn heat_leafwise(&self, t: f64, u: &[f64]) -> Result<Vec<f64>, DirichletError> {
        self.run(&self.leaf_blocks, t, u)
    }

    fn run(
        &self,
        blocks: &[RestrictedBlock],
        t: f64,
        u: &[f64],
    ) -> Result<Vec<f64>, DirichletError> {
        if t < 0.0 {
            return Err(DirichletError::NegativeTime { t });
        }
        self.layout.check_len(u)?;
        let mut out = vec![0.0; self.layout.total()];
        if t == 0.0 {
            for &g in &self.kept {
                out[g] = u[g];
            }
            return Ok(out);
        }
        for block in blocks {
            let n = block.nodes.len();
            let w = DMatrix::<f64>::from_iterator(
                n,
                1,
                block
                    .nodes
                    .iter()
                    .zip(&block.sqrt_m)
                    .map(|(&g, &s)| u[g] * s),
            );
            let mut coef = block.evecs.tr_mul(&w);
            for (k, c) in coef.iter_mut().enumerate() {
                let theta = block.evals[k];
                *c *= if theta == 0.0 { 1.0 } else { (-theta * t).exp() };
            }
            let v = &block.evecs * coef;
            for (slot, &g) in block.nodes.iter().enumerate() {
                out[g] = v[slot] / block.sqrt_m[slot];
            }
        }
        Ok(out)
    }
}

/// Validated membership mask for a node set.
fn kept_mask(layout: &Layout, o: &[usize]) -> Result<Vec<bool>, DirichletError> {
    let total = layout.total();
    let mut mask = vec![false; total];
    for &g in o {
        if g >= total {
            return Err(DirichletError::NodeOutOfRange { node: g, total });
        }
        mask[g] = true;
    }
    Ok(mask)
}

/// Whether both within-leaf neighbours of `g` are in the set; nodes at
/// the physical ends of a leaf never are.
fn is_interior(layout: &Layout, mask: &[bool], g: usize) -> bool {
    let (j, i) = layout.split(g);
    i > 0 && i + 1 < layout.size(j) && mask[g - 1] && mask[g + 1]
}

/// Eigensolve one whitened block, pinning the exact constant kernel
/// when the block is a whole leaf (only then is the flow conservative
/// and the bottom eigenvalue genuinely zero).
fn solve_block(
    nodes: Vec<usize>,
    b: DMatrix<f64>,
    sqrt_m: Vec<f64>,
    whole_leaf: bool,
) -> RestrictedBlock {
    let n = nodes.len();
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
    let mut evals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut evecs = DMatrix::<f64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        evecs.set_column(col, &eig.eigenvectors.column(k));
    }
    if whole_leaf {
        evals[0] = 0.0;
        let mut v0 = DMatrix::<f64>::from_iterator(n, 1, sqrt_m.iter().copied());
        let norm = v0.norm();
        v0 /= norm;
        evecs.set_column(0, &v0.column(0));
        for col in 1..n {
            let mut v = evecs.column(col).clone_owned();
            let proj = v0.column(0).dot(&v);
            v.axpy(-proj, &v0.column(0), 1.0);
            let norm = v.norm();
            if norm > 0.0 {
                v /= norm;
            }
            evecs.set_column(col, &v.column(0));
        }
    }
    RestrictedBlock {
        nodes,
        evals,
        evecs,
        sqrt_m,
    }
}
