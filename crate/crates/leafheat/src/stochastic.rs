//! The continuous-time Markov jump process attached to the discrete
//! generator: exponential holding times with rate `-L_{xx}`, jumps to
//! within-leaf neighbours with probabilities proportional to the
//! off-diagonal row entries, and reproducible per-path RNG streams.
//!
//! Because the generator has no entries between leaves, a path can
//! never change leaf; and because the mass-weighted jump rate
//! `m_i L_{ij}` is the shared edge conductance for both directions,
//! the chain is reversible with stationary law proportional to the
//! node masses on its leaf.
//!
//! Every path is drawn from its own counter-indexed stream of a master
//! seed, so ensembles are reproducible bit-for-bit and independent of
//! simulation order; empirical occupation laws can be aggregated while
//! streaming, without storing paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{heat, DirichletError, HeatOperator, Laplacian, Layout};

/// The smallest ensemble accepted for empirical-law comparisons.
pub const MIN_PATHS: usize = 1000;

/// Errors raised while simulating paths or comparing their laws.
#[derive(Debug, Error)]
pub enum WalkError {
    /// An underlying grid or heat-flow operation failed.
    #[error(transparent)]
    Dirichlet(#[from] DirichletError),
    /// A node index fell outside the grid.
    #[error("node index {node} outside a grid of {total} nodes")]
    NodeOutOfRange { node: usize, total: usize },
    /// Paths are simulated over a positive time horizon.
    #[error("time horizon {0} is not positive")]
    NonpositiveHorizon(f64),
    /// Occupation queries are only defined at nonnegative times.
    #[error("negative time {0}")]
    NegativeTime(f64),
    /// The queried time lies beyond the simulated horizon.
    #[error("time {t} lies beyond the simulated horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    /// Too few paths for a statistically meaningful law.
    #[error("{got} paths, but at least {need} are required")]
    InsufficientPaths { got: usize, need: usize },
    /// A path in the ensemble starts at the wrong node.
    #[error("path {path} starts at node {found}, expected {expected}")]
    OriginMismatch {
        path: usize,
        found: usize,
        expected: usize,
    },
    /// Probe times must be nonnegative and strictly increasing.
    #[error("probe times must be nonnegative and strictly increasing")]
    BadProbes,
}

type Result<T> = std::result::Result<T, WalkError>;

/// One sampled trajectory of the jump process on `[0, horizon]`.
///
/// `times[k]` is the arrival time at `nodes[k]`; the walker sits on
/// `nodes[k]` until `times[k+1]` (or until the horizon, for the last
/// entry).  `times[0] = 0` and `nodes[0]` is the initial node.  The
/// path is right-continuous: at an event time the walker is already at
/// the new node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    /// Starting node (global index).
    pub initial: usize,
    /// Strictly increasing event times, beginning with `0.0`.
    pub times: Vec<f64>,
    /// Node occupied from each event time on; same length as `times`.
    pub nodes: Vec<usize>,
    /// The path is defined on `[0, horizon]`.
    pub horizon: f64,
    /// Master seed of the generator that produced the path.
    pub seed: u64,
    /// Stream index within the master seed (the path's id).
    pub stream: u64,
}

impl WalkPath {
    /// Node occupied at time `t ∈ [0, horizon]`.
    pub fn position_at(&self, t: f64) -> Result<usize> {
        if t < 0.0 {
            return Err(WalkError::NegativeTime(t));
        }
        if t > self.horizon {
            return Err(WalkError::BeyondHorizon {
                t,
                horizon: self.horizon,
            });
        }
        let idx = self.times.partition_point(|&s| s <= t);
        Ok(self.nodes[idx - 1])
    }

    /// Number of jumps performed before the horizon.
    pub fn jump_count(&self) -> usize {
        self.times.len() - 1
    }

    /// True when every recorded transition stays on one leaf.
    pub fn confined_to_one_leaf(&self, layout: &Layout) -> bool {
        self.nodes
            .windows(2)
            .all(|w| layout.split(w[0]).0 == layout.split(w[1]).0)
    }

    /// True when every recorded transition moves to a within-leaf
    /// nearest neighbour.
    pub fn steps_are_neighbours(&self, layout: &Layout) -> bool {
        self.nodes.windows(2).all(|w| {
            let (ja, ka) = layout.split(w[0]);
            let (jb, kb) = layout.split(w[1]);
            ja == jb && (ka as i64 - kb as i64).abs() == 1
        })
    }
}

/// Jump rates of one leaf block, tabulated once per ensemble: from
/// local node `k`, the walker moves right with rate `right[k]` and
/// leaves at total rate `total[k] = -L_{kk}`.
struct LeafRates {
    offset: usize,
    right: Vec<f64>,
    total: Vec<f64>,
}

fn leaf_rates(lap: &Laplacian, leaf: usize) -> LeafRates {
    let layout = lap.layout();
    let o = layout.offset(leaf);
    let m = layout.size(leaf);
    let cond = &lap.edge_conductances()[leaf];
    let masses = lap.masses();
    let mut right = vec![0.0; m];
    let mut total = vec![0.0; m];
    for k in 0..m {
        let left = if k > 0 { cond[k - 1] / masses[o + k] } else { 0.0 };
        let r = if k + 1 < m { cond[k] / masses[o + k] } else { 0.0 };
        right[k] = r;
        total[k] = left + r;
    }
    LeafRates {
        offset: o,
        right,
        total,
    }
}

/// A uniform draw from the open interval `(0, 1)`, so that `-ln u` is
/// strictly positive and finite.
#[inline]
fn draw_positive(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

fn run_walk(
    rates: &LeafRates,
    k0: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> WalkPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut k = k0;
    let mut t = 0.0;
    let guess = (rates.total[k0] * horizon * 1.2) as usize + 8;
    let mut times = Vec::with_capacity(guess.min(1 << 22));
    let mut nodes = Vec::with_capacity(guess.min(1 << 22));
    times.push(0.0);
    nodes.push(rates.offset + k0);
    loop {
        let total = rates.total[k];
        if !(total > 0.0) {
            break;
        }
        let hold = -draw_positive(&mut rng).ln() / total;
        let t_next = t + hold;
        if t_next >= horizon {
            break;
        }
        let u: f64 = rng.gen();
        k = if u * total < rates.right[k] { k + 1 } else { k - 1 };
        t = t_next;
        times.push(t);
        nodes.push(rates.offset + k);
    }
    WalkPath {
        initial: rates.offset + k0,
        times,
        nodes,
        horizon,
        seed,
        stream,
    }
}

fn check_node(layout: &Layout, x0: usize) -> Result<(usize, usize)> {
    if x0 >= layout.total() {
        return Err(WalkError::NodeOutOfRange {
            node: x0,
            total: layout.total(),
        });
    }
    Ok(layout.split(x0))
}

/// Simulates one path of the jump process started at `x0` over
/// `[0, horizon]`.  Identical seeds reproduce the path event for
/// event; the path coincides with stream `0` of [`simulate_many`].
pub fn simulate(lap: &Laplacian, x0: usize, horizon: f64, seed: u64) -> Result<WalkPath> {
    if !(horizon > 0.0) {
        return Err(WalkError::NonpositiveHorizon(horizon));
    }
    let (leaf, k0) = check_node(lap.layout(), x0)?;
    let rates = leaf_rates(lap, leaf);
    Ok(run_walk(&rates, k0, horizon, seed, 0))
}

/// Simulates `n_paths` independent paths from `x0`, path `i` drawing
/// from stream `i` of the master seed.  Paths are simulated in
/// parallel; the result is independent of scheduling.
pub fn simulate_many(
    lap: &Laplacian,
    x0: usize,
    horizon: f64,
    master_seed: u64,
    n_paths: usize,
) -> Result<Vec<WalkPath>> {
    if !(horizon > 0.0) {
        return Err(WalkError::NonpositiveHorizon(horizon));
    }
    let (leaf, k0) = check_node(lap.layout(), x0)?;
    let rates = leaf_rates(lap, leaf);
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| run_walk(&rates, k0, horizon, master_seed, i as u64))
        .collect())
}

/// Empirical occupation law of an ensemble at time `t`: the fraction
/// of paths sitting on each node.  Requires at least [`MIN_PATHS`]
/// paths and `t` within every path's horizon.
pub fn empirical_law(layout: &Layout, paths: &[WalkPath], t: f64) -> Result<Vec<f64>> {
    if paths.len() < MIN_PATHS {
        return Err(WalkError::InsufficientPaths {
            got: paths.len(),
            need: MIN_PATHS,
        });
    }
    let total = layout.total();
    let mut counts = vec![0u64; total];
    for path in paths {
        let node = path.position_at(t)?;
        if node >= total {
            return Err(WalkError::NodeOutOfRange { node, total });
        }
        counts[node] += 1;
    }
    let n = paths.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

/// The `x0`-row of the heat kernel as a probability law on nodes:
/// `P(X_t = y | X_0 = x0) = (m_y / m_{x0}) (P_t 1_{x0})(y)`, using the
/// measure symmetry of the semigroup.  Sums to one, vanishes off the
/// leaf of `x0`, and is exactly the point mass at `t = 0`.
pub fn heat_row(hop: &HeatOperator, x0: usize, t: f64) -> Result<Vec<f64>> {
    let layout = hop.layout();
    check_node(layout, x0)?;
    let mut e = vec![0.0; layout.total()];
    e[x0] = 1.0;
    let col = heat(hop, t, &e)?;
    let masses = hop.masses();
    Ok(col
        .iter()
        .zip(masses)
        .map(|(v, m)| v * m / masses[x0])
        .collect())
}

/// Total-variation distance `½ Σ |p_i - q_i|` between two laws.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Statistical band for the total-variation distance between the
/// empirical law of `paths` samples and its true law on `cells`
/// support points: the mean bound `½√(cells/paths)` (Cauchy–Schwarz
/// over the multinomial cell deviations) plus three times the
/// bounded-difference fluctuation scale `1/(2√paths)`.
pub fn tv_band(cells: usize, paths: usize) -> f64 {
    let n = paths as f64;
    0.5 * (cells as f64 / n).sqrt() + 1.5 / n.sqrt()
}

/// Outcome of an empirical-law-versus-heat-kernel comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    /// Comparison time.
    pub t: f64,
    /// Ensemble size.
    pub paths: usize,
    /// Nodes on the starting leaf (the law's support).
    pub cells: usize,
    /// Total-variation distance between empirical law and kernel row.
    pub tv: f64,
    /// Acceptance band from [`tv_band`].
    pub band: f64,
}

impl LawComparison {
    /// True when the empirical law sits inside the statistical band.
    pub fn within_band(&self) -> bool {
        self.tv <= self.band
    }
}

/// Compares the empirical occupation law of an ensemble started at
/// `x0` against the `x0`-row of the heat kernel at time `t`.
pub fn compare_to_heat(
    hop: &HeatOperator,
    paths: &[WalkPath],
    x0: usize,
    t: f64,
) -> Result<LawComparison> {
    let layout = hop.layout();
    let (leaf, _) = check_node(layout, x0)?;
    for (i, path) in paths.iter().enumerate() {
        if path.initial != x0 {
            return Err(WalkError::OriginMismatch {
                path: i,
                found: path.initial,
                expected: x0,
            });
        }
    }
    let law = empirical_law(layout, paths, t)?;
    let row = heat_row(hop, x0, t)?;
    Ok(LawComparison {
        t,
        paths: paths.len(),
        cells: layout.size(leaf),
        tv: total_variation(&law, &row),
        band: tv_band(layout.size(leaf), paths.len()),
    })
}

/// Empirical laws of one ensemble at several probe times, aggregated
/// while streaming so that no path is ever materialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkEnsemble {
    /// Master seed of the ensemble.
    pub master_seed: u64,
    /// Number of simulated paths.
    pub n_paths: usize,
    /// Probe times, strictly increasing.
    pub probes: Vec<f64>,
    /// One empirical law per probe time.
    pub laws: Vec<Vec<f64>>,
}

/// Simulates `n_paths` paths from `x0` (same streams as
/// [`simulate_many`]) and records the occupation law at each probe
/// time on the fly.  Per-path counts are summed associatively, so the
/// laws equal what [`empirical_law`] would compute from the stored
/// ensemble, bit for bit, at a small fraction of the memory.
pub fn ensemble_laws(
    lap: &Laplacian,
    x0: usize,
    probes: &[f64],
    master_seed: u64,
    n_paths: usize,
) -> Result<WalkEnsemble> {
    if probes.is_empty()
        || probes[0] < 0.0
        || probes.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(WalkError::BadProbes);
    }
    if n_paths < MIN_PATHS {
        return Err(WalkError::InsufficientPaths {
            got: n_paths,
            need: MIN_PATHS,
        });
    }
    let layout = lap.layout();
    let (leaf, k0) = check_node(layout, x0)?;
    let rates = leaf_rates(lap, leaf);
    let total = layout.total();
    let horizon = *probes.last().unwrap();

    let counts = (0..n_paths)
        .into_par_iter()
        .fold(
            || vec![0u64; probes.len() * total],
            |mut acc, i| {
                let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
                rng.set_stream(i as u64);
                let mut k = k0;
                let mut t = 0.0;
                let mut probe = 0;
                loop {
                    let rate = rates.total[k];
                    let t_next = if rate > 0.0 {
                        t - draw_positive(&mut rng).ln() / rate
                    } else {
                        f64::INFINITY
                    };
                    while probe < probes.len() && probes[probe] < t_next {
                        acc[probe * total + rates.offset + k] += 1;
                        probe += 1;
                    }
                    if probe == probes.len() || t_next >= horizon {
                        break;
                    }
                    let u: f64 = rng.gen();
                    k = if u * rate < rates.right[k] { k + 1 } else { k - 1 };
                    t = t_next;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; probes.len() * total],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let n = n_paths as f64;
    let laws = (0..probes.len())
        .map(|p| {
            counts[p * total..(p + 1) * total]
                .iter()
                .map(|&c| c as f64 / n)
                .collect()
        })
        .collect();
    Ok(WalkEnsemble {
        master_seed,
        n_paths,
        probes: probes.to_vec(),
        laws,
    })
}

/// Largest asymmetry of the mass-weighted jump rates,
/// `sup_{edges} |m_i L_{ij} - m_j L_{ji}|`, with the rates computed
/// exactly as the simulator computes them.  Both products reconstruct
/// the shared edge conductance, so the defect is pure round-off — and
/// exactly zero on grids whose masses and conductances are dyadic.
pub fn detailed_balance_defect(lap: &Laplacian) -> f64 {
    let layout = lap.layout();
    let masses = lap.masses();
    let mut worst = 0.0f64;
    for j in 0..layout.leaf_count() {
        let o = layout.offset(j);
        for (k, &c) in lap.edge_conductances()[j].iter().enumerate() {
            let a = o + k;
            let b = a + 1;
            let flux_ab = masses[a] * (c / masses[a]);
            let flux_ba = masses[b] * (c / masses[b]);
            worst = worst.max((flux_ab - flux_ba).abs());
        }
    }
    worst
}
