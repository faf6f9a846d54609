//! Intrinsic distance between node sets and the short-time behaviour
//! of heat mass flowing between them.

use serde::{Deserialize, Serialize};

use super::grid::{DiscreteMeasure, Layout};
use super::heat::{heat, positive_flow, HeatOperator};
use super::DirichletError;
use crate::leafgeom::Rectangle;

/// Distance induced by functions with leafwise gradient at most one:
/// per leaf, the smallest arc gap between the two sets; minimized over
/// leaves meeting both.  Sets on disjoint leaf families are infinitely
/// far apart — the gradient bound says nothing across leaves, and the
/// zero-energy leaf indicators realize arbitrarily large gaps.
pub(super) fn distance_on(
    layout: &Layout,
    a: &[usize],
    b: &[usize],
) -> Result<f64, DirichletError> {
    if a.is_empty() || b.is_empty() {
        return Err(DirichletError::EmptySet);
    }
    let total = layout.total();
    let mut in_a = vec![false; total];
    for &i in a {
        if i >= total {
            return Err(DirichletError::NodeOutOfRange { node: i, total });
        }
        in_a[i] = true;
    }
    for &i in b {
        if i >= total {
            return Err(DirichletError::NodeOutOfRange { node: i, total });
        }
        if in_a[i] {
            return Err(DirichletError::SetsIntersect { node: i });
        }
    }
    let leaves = layout.leaf_count();
    let mut arcs_a: Vec<Vec<f64>> = vec![Vec::new(); leaves];
    let mut arcs_b: Vec<Vec<f64>> = vec![Vec::new(); leaves];
    for &i in a {
        let (j, node) = layout.split(i);
        arcs_a[j].push(layout.arc(j, node));
    }
    for &i in b {
        let (j, node) = layout.split(i);
        arcs_b[j].push(layout.arc(j, node));
    }
    let mut best = f64::INFINITY;
    for j in 0..leaves {
        for &x in &arcs_a[j] {
            for &y in &arcs_b[j] {
                best = best.min((x - y).abs());
            }
        }
    }
    Ok(best)
}

/// Intrinsic distance between two node sets of a rectangle's grid.
/// `+∞` when no leaf meets both sets.
pub fn intrinsic_distance(
    rect: &Rectangle,
    a: &[usize],
    b: &[usize],
) -> Result<f64, DirichletError> {
    distance_on(&Layout::of(rect), a, b)
}

/// `∫_A P_t 1_B dμ`: the heat mass that has flowed from `B` into `A`
/// by time `t`.
pub fn heat_mass_between(
    hop: &HeatOperator,
    measure: &DiscreteMeasure,
    a: &[usize],
    b: &[usize],
    t: f64,
) -> Result<f64, DirichletError> {
    if a.is_empty() || b.is_empty() {
        return Err(DirichletError::EmptySet);
    }
    let total = measure.layout().total();
    let mut ind = vec![0.0; total];
    for &i in b {
        if i >= total {
            return Err(DirichletError::NodeOutOfRange { node: i, total });
        }
        ind[i] = 1.0;
    }
    let v = heat(hop, t, &ind)?;
    let mut mass = 0.0;
    for &i in a {
        if i >= total {
            return Err(DirichletError::NodeOutOfRange { node: i, total });
        }
        mass += measure.mass(i) * v[i];
    }
    Ok(mass)
}

/// One time slice of the short-time table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaradhanRow {
    pub t: f64,
    /// `∫_A P_t 1_B dμ` (zero when it underflows; `log_mass` stays
    /// meaningful).
    pub mass: f64,
    pub log_mass: f64,
    /// `t · log ∫_A P_t 1_B dμ`, the quantity with a short-time limit.
    pub t_log_mass: f64,
    /// `mass / (√(μA μB) e^{-d²/(2t)})`.
    pub gaffney_ratio: f64,
    /// `mass / (√(μA μB) e^{-d²/(4t)})` — the scale matched to this
    /// generator, which is a pure second difference (its kernel has
    /// variance `2t`), so this is the ratio expected to stay below one.
    pub gaffney_ratio_sharp: f64,
}

/// Short-time heat masses between two sets at a list of times, with
/// both normalizations of the Gaffney-type ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaradhanTable {
    pub distance: f64,
    pub mu_a: f64,
    pub mu_b: f64,
    pub rows: Vec<VaradhanRow>,
}

/// Tabulates `t · log ∫_A P_t 1_B dμ` over `t_list`.
///
/// Masses much smaller than the round-off floor of the spectral sum
/// (they decay like `e^{-d²/(4t)}`) are evaluated through the
/// positivity-preserving flow, which keeps relative accuracy at any
/// depth, so the logarithms in the table are trustworthy down to the
/// lattice resolution scale `t ≈ d·h`.
pub fn varadhan_check(
    hop: &HeatOperator,
    measure: &DiscreteMeasure,
    a: &[usize],
    b: &[usize],
    t_list: &[f64],
) -> Result<VaradhanTable, DirichletError> {
    let d = distance_on(measure.layout(), a, b)?;
    if !d.is_finite() {
        return Err(DirichletError::InfiniteDistance);
    }
    let mu_a = measure.mass_of(a);
    let mu_b = measure.mass_of(b);
    let total = measure.layout().total();
    let mut ind = vec![0.0; total];
    for &i in b {
        ind[i] = 1.0;
    }
    let log_geo = 0.5 * (mu_a * mu_b).ln();
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        if t <= 0.0 {
            return Err(DirichletError::NegativeTime { t });
        }
        let log_mass = if d * d / (4.0 * t) > 16.0 {
            let (layout, cond, masses) = hop.positive_parts();
            let (profile, log_scale) = positive_flow(layout, cond, masses, t, &ind)?;
            let s: f64 = a.iter().map(|&i| measure.mass(i) * profile[i]).sum();
            if s > 0.0 {
                log_scale + s.ln()
            } else {
                f64::NEG_INFINITY
            }
        } else {
            let v = heat(hop, t, &ind)?;
            let s: f64 = a.iter().map(|&i| measure.mass(i) * v[i]).sum();
            if s > 0.0 {
                s.ln()
            } else {
                f64::NEG_INFINITY
            }
        };
        let mass = if log_mass == f64::NEG_INFINITY {
            0.0
        } else {
            log_mass.exp()
        };
        rows.push(VaradhanRow {
            t,
            mass,
            log_mass,
            t_log_mass: t * log_mass,
            gaffney_ratio: (log_mass - log_geo + d * d / (2.0 * t)).exp(),
            gaffney_ratio_sharp: (log_mass - log_geo + d * d / (4.0 * t)).exp(),
        });
    }
    Ok(VaradhanTable {
        distance: d,
        mu_a,
        mu_b,
        rows,
    })
}
