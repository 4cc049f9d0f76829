//! Distributed recovery of the initial state `x_0` before the performing phase.
//!
//! Agents that know `x_0` (or a measurement `H_i x_0`) keep their value pinned
//! while the others run the consensus update
//! `x̂_i ← x̂_i + (1/N) Σ_{j ∈ N̄_i} (x̂_j − x̂_i)` over the reversed graph.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::DirectedGraph;
use crate::scalar::{lit, to_f64, Real};

pub const DEFAULT_TOL: f64 = 1e-9;

/// Iteration cap used when none is given: `100 N`.
pub fn default_max_iters(agents: usize) -> usize {
    100 * agents.max(1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitError {
    #[error("no agent knows the initial state")]
    NoHolders,
    #[error("holder {0} is not a node of the graph")]
    HolderOutOfRange(usize),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("observation matrices have rank {rank} < state dimension {n}")]
    RankDeficient { rank: usize, n: usize },
    #[error("observation {agent} has {cols} columns, state has {n}")]
    Dimension { agent: usize, cols: usize, n: usize },
    #[error("{got} observation matrices for {agents} agents")]
    ObservationCount { got: usize, agents: usize },
    #[error("consensus did not reach tolerance after {iterations} iterations (relative error {error:e})")]
    NonConvergence { iterations: usize, error: f64 },
}

/// Per-agent estimates after the consensus phase.
#[derive(Debug, Clone)]
pub struct ConsensusEstimates<T: Real> {
    pub estimates: Vec<DVector<T>>,
    pub iterations: usize,
    /// Relative error `max_i ‖x̂_i − x_0‖ / ‖x_0‖` before each iteration and at the end.
    pub error_history: Vec<f64>,
}

impl<T: Real> ConsensusEstimates<T> {
    pub fn max_error(&self, x0: &DVector<T>) -> T {
        self.estimates
            .iter()
            .map(|e| (e - x0).norm())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// How the initial state is exposed to the agents.
#[derive(Debug, Clone)]
pub enum ObservationModel<T: Real> {
    /// Listed agents know `x_0` exactly.
    Holders(Vec<usize>),
    /// Agent `i` measures `y_i = H_i x_0`.
    Partial(Vec<DMatrix<T>>),
}

/// Runs consensus on vectors where `pinned[i][b]` marks entries held fixed.
///
/// `error` measures the absolute estimation error of a state of the iteration;
/// the loop stops once it drops to `tol · scale`. The history is relative to `scale`.
fn pinned_consensus<T: Real>(
    g: &DirectedGraph,
    mut est: Vec<Vec<DVector<T>>>,
    pinned: &[Vec<bool>],
    error: impl Fn(&[Vec<DVector<T>>]) -> T,
    scale: T,
    tol: T,
    max_iters: usize,
) -> Result<(Vec<Vec<DVector<T>>>, usize, Vec<f64>), InitError> {
    let agents = g.n_nodes();
    let blocks = pinned.first().map_or(0, |p| p.len());
    let reversed = g.reverse();
    let senders: Vec<Vec<usize>> = (0..agents)
        .map(|i| {
            reversed
                .in_neighbors(i)
                .into_iter()
                .filter(|&j| j != i)
                .collect()
        })
        .collect();
    let gain = T::one() / lit::<T>(agents as f64);
    let threshold = tol * scale;
    let mut history = Vec::new();
    for it in 0..=max_iters {
        let err = error(&est);
        history.push(to_f64(if scale > T::zero() { err / scale } else { err }));
        if err <= threshold {
            return Ok((est, it, history));
        }
        if it == max_iters {
            break;
        }
        let mut next = est.clone();
        for i in 0..agents {
            for b in 0..blocks {
                if pinned[i][b] {
                    continue;
                }
                let mut delta = DVector::zeros(est[i][b].len());
                for &j in &senders[i] {
                    delta += &est[j][b] - &est[i][b];
                }
                next[i][b] += delta * gain;
            }
        }
        est = next;
    }
    Err(InitError::NonConvergence {
        iterations: max_iters,
        error: *history.last().unwrap_or(&f64::NAN),
    })
}

/// Consensus when the agents in `holders` know `x_0` and the rest start at zero.
///
/// Stops once `max_i ‖x̂_i − x_0‖ ≤ tol ‖x_0‖`.
pub fn broadcast_init<T: Real>(
    g: &DirectedGraph,
    holders: &[usize],
    x0: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> Result<ConsensusEstimates<T>, InitError> {
    let agents = g.n_nodes();
    if holders.is_empty() {
        return Err(InitError::NoHolders);
    }
    if let Some(&h) = holders.iter().find(|&&h| h >= agents) {
        return Err(InitError::HolderOutOfRange(h));
    }
    if !g.is_strongly_connected() {
        return Err(InitError::NotStronglyConnected);
    }
    let pinned: Vec<Vec<bool>> = (0..agents).map(|i| vec![holders.contains(&i)]).collect();
    let est = (0..agents)
        .map(|i| {
            vec![if pinned[i][0] {
                x0.clone()
            } else {
                DVector::zeros(x0.len())
            }]
        })
        .collect();
    let error = |est: &[Vec<DVector<T>>]| {
        est.iter()
            .map(|row| (&row[0] - x0).norm())
            .fold(T::zero(), |a, b| a.max(b))
    };
    let (est, iterations, error_history) =
        pinned_consensus(g, est, &pinned, error, x0.norm(), tol, max_iters)?;
    Ok(ConsensusEstimates {
        estimates: est.into_iter().map(|mut v| v.remove(0)).collect(),
        iterations,
        error_history,
    })
}

fn numerical_rank<T: Real>(m: &DMatrix<T>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(T::zero(), |a, &b| a.max(b));
    let dim = lit::<T>(m.nrows().max(m.ncols()) as f64);
    let cut = top * dim * T::default_epsilon();
    sv.iter().filter(|&&v| v > cut).count()
}

/// Least-squares `x̂` from one agent's decoded blocks `[y_j; vec H_j]`.
fn reconstruct<T: Real>(
    blocks: &[DVector<T>],
    obs: &[DMatrix<T>],
    rows: usize,
    n: usize,
) -> DVector<T> {
    let mut h_hat = DMatrix::zeros(rows, n);
    let mut y_hat = DVector::zeros(rows);
    let mut row = 0;
    for (b, v) in blocks.iter().enumerate() {
        let r = obs[b].nrows();
        y_hat.rows_mut(row, r).copy_from(&v.rows(0, r));
        let h = DMatrix::from_column_slice(r, n, &v.as_slice()[r..]);
        h_hat.rows_mut(row, r).copy_from(&h);
        row += r;
    }
    let normal = h_hat.transpose() * &h_hat;
    let rhs = h_hat.transpose() * &y_hat;
    match normal.cholesky() {
        Some(c) => c.solve(&rhs),
        // the decoded stack can lose definiteness while far from consensus
        None => h_hat
            .svd(true, true)
            .solve(&y_hat, T::default_epsilon())
            .expect("both factors requested"),
    }
}

/// Consensus on the pairs `(H_j x_0, vec H_j)`, after which every agent solves
/// the normal equations `(ĤᵀĤ) x̂ = Ĥᵀŷ` with its reconstructed stack.
pub fn partial_obs_init<T: Real>(
    g: &DirectedGraph,
    obs: &[DMatrix<T>],
    x0: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> Result<ConsensusEstimates<T>, InitError> {
    let agents = g.n_nodes();
    let n = x0.len();
    if obs.len() != agents {
        return Err(InitError::ObservationCount {
            got: obs.len(),
            agents,
        });
    }
    for (agent, h) in obs.iter().enumerate() {
        if h.ncols() != n {
            return Err(InitError::Dimension {
                agent,
                cols: h.ncols(),
                n,
            });
        }
    }
    let rows: usize = obs.iter().map(|h| h.nrows()).sum();
    let mut stacked = DMatrix::zeros(rows, n);
    let mut row = 0;
    for h in obs {
        stacked.rows_mut(row, h.nrows()).copy_from(h);
        row += h.nrows();
    }
    let rank = numerical_rank(&stacked);
    if rank < n {
        return Err(InitError::RankDeficient { rank, n });
    }
    if !g.is_strongly_connected() {
        return Err(InitError::NotStronglyConnected);
    }

    let payloads: Vec<DVector<T>> = obs
        .iter()
        .map(|h| {
            let y = h * x0;
            DVector::from_iterator(y.len() + h.len(), y.iter().chain(h.iter()).copied())
        })
        .collect();
    let pinned: Vec<Vec<bool>> = (0..agents)
        .map(|i| (0..agents).map(|b| b == i).collect())
        .collect();
    let est = (0..agents)
        .map(|i| {
            (0..agents)
                .map(|b| {
                    if b == i {
                        payloads[b].clone()
                    } else {
                        DVector::zeros(payloads[b].len())
                    }
                })
                .collect()
        })
        .collect();
    let reconstruct_all = |est: &[Vec<DVector<T>>]| -> Vec<DVector<T>> {
        est.iter()
            .map(|blocks| reconstruct(blocks, obs, rows, n))
            .collect()
    };
    let error = |est: &[Vec<DVector<T>>]| {
        reconstruct_all(est)
            .iter()
            .map(|v| (v - x0).norm())
            .fold(T::zero(), |a, b| a.max(b))
    };
    let (est, iterations, error_history) =
        pinned_consensus(g, est, &pinned, error, x0.norm(), tol, max_iters)?;
    let estimates = reconstruct_all(&est);
    Ok(ConsensusEstimates {
        estimates,
        iterations,
        error_history,
    })
}

/// Dispatches on the observation model.
pub fn initialize<T: Real>(
    g: &DirectedGraph,
    model: &ObservationModel<T>,
    x0: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> Result<ConsensusEstimates<T>, InitError> {
    match model {
        ObservationModel::Holders(h) => broadcast_init(g, h, x0, tol, max_iters),
        ObservationModel::Partial(h) => partial_obs_init(g, h, x0, tol, max_iters),
    }
}
