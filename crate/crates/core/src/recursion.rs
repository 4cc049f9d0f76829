//! Backward design phase: the per-agent `P̄`, `P`, `P̆` tables.
//!
//! One design step, for every agent `i` and `k = M−1, …, 0`:
//!
//! ```text
//! P̄_{k+1,i} = (P̆_{k+1,i}⁻¹ + B_{k,i} R_{k,i}⁻¹ B_{k,i}ᵀ)⁻¹
//! P_{k+1,i} = (Σ_{j∈N_i} ω_ij P̄_{k+1,j}⁻¹)⁻¹
//! P̆_{k,i}   = A_kᵀ P_{k+1,i} A_k + N Q_k
//! ```
//!
//! starting from `P̆_{M,i} = N Q_M`. Agent `i` only ever sees the `P̄⁻¹` messages
//! of its in-neighbors in the communication graph.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::{check_weight, DirectedGraph, FusionWeights, GraphError};
use crate::linalg::{lambda_max, lambda_min, spd_inverse, spectral_norm, symmetrize};
use crate::model::{ModelError, SystemSchedule};
use crate::scalar::{lit, to_f64, Real};

/// Default stationary-solver tolerance on the `‖·‖₂` step residual.
pub const STATIONARY_TOL: f64 = 1e-10;
pub const STATIONARY_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecursionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("communication graph is not strongly connected")]
    NotStronglyConnected,
    #[error("graph has {graph} nodes but the schedule has {agents} agents")]
    AgentCount { graph: usize, agents: usize },
    #[error("numerical breakdown: {what} of agent {i} at step {k} is not positive definite")]
    Breakdown {
        what: &'static str,
        k: usize,
        i: usize,
    },
    #[error(
        "stationary iteration did not converge in {iterations} iterations (last residual {last:e})"
    )]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
}

/// Design-phase matrices over the segment `[start, end]`.
///
/// `P̆` is stored for `k ∈ [start, end]`, `P̄`, `P̄⁻¹` and `P` for `k ∈ (start, end]`.
#[derive(Debug, Clone)]
pub struct RecursionTables<T: Real> {
    start: usize,
    end: usize,
    p_bar: Vec<Vec<DMatrix<T>>>,
    p_bar_inv: Vec<Vec<DMatrix<T>>>,
    p: Vec<Vec<DMatrix<T>>>,
    p_breve: Vec<Vec<DMatrix<T>>>,
    omega: Vec<DMatrix<T>>,
    messages_per_step: usize,
}

impl<T: Real> RecursionTables<T> {
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn n_agents(&self) -> usize {
        self.p_breve[0].len()
    }

    pub fn p_breve(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.p_breve[k - self.start][i]
    }

    pub fn p_bar(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.p_bar[k - self.start - 1][i]
    }

    pub fn p_bar_inv(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.p_bar_inv[k - self.start - 1][i]
    }

    pub fn p(&self, k: usize, i: usize) -> &DMatrix<T> {
        &self.p[k - self.start - 1][i]
    }

    /// Fusion weights that produced `P_{k,·}`.
    pub fn omega(&self, k: usize) -> &DMatrix<T> {
        &self.omega[k - self.start - 1]
    }

    /// Matrix messages sent per design step (one per non-self edge).
    pub fn messages_per_step(&self) -> usize {
        self.messages_per_step
    }

    pub fn total_design_messages(&self) -> usize {
        self.messages_per_step * (self.end - self.start)
    }
}

/// Local update of agent `i`: `(P̄, P̄⁻¹)` from `P̆_{k+1,i}`, `B_{k,i}`, `R_{k,i}`.
///
/// Uses the Woodbury form `P̆ − P̆B(R + BᵀP̆B)⁻¹BᵀP̆` for `P̄` when the input is
/// narrower than the state.
pub fn local_p_bar<T: Real>(
    p_breve_next: &DMatrix<T>,
    b: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Option<(DMatrix<T>, DMatrix<T>)> {
    let p_breve_inv = spd_inverse(p_breve_next)?;
    let r_inv = spd_inverse(r)?;
    let p_bar_inv = symmetrize(&(p_breve_inv + b * r_inv * b.transpose()));
    let p_bar = if b.ncols() < b.nrows() {
        let pb = p_breve_next * b;
        let inner = r + b.transpose() * &pb;
        let chol = symmetrize(&inner).cholesky()?;
        symmetrize(&(p_breve_next - &pb * chol.solve(&pb.transpose())))
    } else {
        spd_inverse(&p_bar_inv)?
    };
    Some((p_bar, p_bar_inv))
}

/// Local fusion `(Σ_j ω_ij P̄_j⁻¹)⁻¹` over the messages an agent received.
pub fn fuse<T: Real>(inbox: &[(T, &DMatrix<T>)]) -> Option<DMatrix<T>> {
    let n = inbox.first()?.1.nrows();
    let mut acc = DMatrix::zeros(n, n);
    for (w, m) in inbox {
        acc += *m * *w;
    }
    spd_inverse(&acc)
}

/// What an agent's weight rule sees when it has to pick `ω_{i·,k}`.
pub struct FusionContext<'a, T: Real> {
    /// Step of the `P_{k,i}` being formed.
    pub k: usize,
    pub agent: usize,
    pub neighbors: &'a [usize],
    /// `P̄_{k,j}⁻¹` for each neighbor in `neighbors` order.
    pub p_bar_invs: &'a [&'a DMatrix<T>],
    /// `A_{k−1}`.
    pub a_prev: &'a DMatrix<T>,
}

/// Runs the backward design phase over the whole horizon with weights `w`.
pub fn design_backward<T: Real, W: FusionWeights<T> + ?Sized>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    w: &W,
) -> Result<RecursionTables<T>, RecursionError> {
    let m = s.finite_horizon()?;
    check_pair(s, g)?;
    let n = lit::<T>(s.n_agents() as f64);
    let terminal = vec![s.q(m) * n; s.n_agents()];
    design_segment(s, g, 0, m, terminal, |ctx| {
        Ok(ctx
            .neighbors
            .iter()
            .map(|&j| w.weight(ctx.k, ctx.agent, j))
            .collect())
    })
}

pub(crate) fn check_pair<T: Real>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
) -> Result<(), RecursionError> {
    if g.n_nodes() != s.n_agents() {
        return Err(RecursionError::AgentCount {
            graph: g.n_nodes(),
            agents: s.n_agents(),
        });
    }
    if !g.is_strongly_connected() {
        return Err(RecursionError::NotStronglyConnected);
    }
    Ok(())
}

/// Backward recursion over `[start, end]` from the given terminal `P̆_{end,·}`.
///
/// `choose` supplies each agent's weights for its in-neighbors (in
/// [`DirectedGraph::in_neighbors`] order) at every step.
pub fn design_segment<T, F>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    start: usize,
    end: usize,
    terminal: Vec<DMatrix<T>>,
    mut choose: F,
) -> Result<RecursionTables<T>, RecursionError>
where
    T: Real,
    F: FnMut(&FusionContext<'_, T>) -> Result<Vec<T>, RecursionError>,
{
    let agents = s.n_agents();
    let nq = lit::<T>(agents as f64);
    let neighbors: Vec<Vec<usize>> = (0..agents).map(|i| g.in_neighbors(i)).collect();
    let steps = end - start;

    let mut p_breve = vec![Vec::new(); steps + 1];
    let mut p_bar = vec![Vec::new(); steps];
    let mut p_bar_inv = vec![Vec::new(); steps];
    let mut p = vec![Vec::new(); steps];
    let mut omega = vec![DMatrix::zeros(agents, agents); steps];
    p_breve[steps] = terminal;

    for k in (start..end).rev() {
        let slot = k - start;
        // round 1: every agent updates P̄_{k+1,i} from its own data
        let mut bars = Vec::with_capacity(agents);
        let mut bar_invs = Vec::with_capacity(agents);
        for i in 0..agents {
            let (bar, bar_inv) = local_p_bar(&p_breve[slot + 1][i], &s.b(k, i), s.r(k, i)).ok_or(
                RecursionError::Breakdown {
                    what: "P̄",
                    k: k + 1,
                    i,
                },
            )?;
            bars.push(bar);
            bar_invs.push(bar_inv);
        }
        // round 2: fuse in-neighbor messages
        let a = s.a(k);
        let mut ps = Vec::with_capacity(agents);
        let mut breves = Vec::with_capacity(agents);
        for i in 0..agents {
            let msgs: Vec<&DMatrix<T>> = neighbors[i].iter().map(|&j| &bar_invs[j]).collect();
            let ctx = FusionContext {
                k: k + 1,
                agent: i,
                neighbors: &neighbors[i],
                p_bar_invs: &msgs,
                a_prev: a,
            };
            let weights = choose(&ctx)?;
            for (&j, &wij) in neighbors[i].iter().zip(&weights) {
                check_weight(g, i, j, wij)?;
                omega[slot][(i, j)] = wij;
            }
            let inbox: Vec<(T, &DMatrix<T>)> = weights.iter().copied().zip(msgs).collect();
            let pi = fuse(&inbox).ok_or(RecursionError::Breakdown {
                what: "P",
                k: k + 1,
                i,
            })?;
            let breve = symmetrize(&(a.transpose() * &pi * a + s.q(k) * nq));
            if breve.clone().cholesky().is_none() {
                return Err(RecursionError::Breakdown { what: "P̆", k, i });
            }
            ps.push(pi);
            breves.push(breve);
        }
        p_bar[slot] = bars;
        p_bar_inv[slot] = bar_invs;
        p[slot] = ps;
        p_breve[slot] = breves;
    }

    Ok(RecursionTables {
        start,
        end,
        p_bar,
        p_bar_inv,
        p,
        p_breve,
        omega,
        messages_per_step: g.edge_count_without_self_loops(),
    })
}

/// Fixed points of the time-invariant recursion.
#[derive(Debug, Clone)]
pub struct StationaryTables<T: Real> {
    pub p: Vec<DMatrix<T>>,
    pub p_breve: Vec<DMatrix<T>>,
    pub p_bar: Vec<DMatrix<T>>,
    pub p_bar_inv: Vec<DMatrix<T>>,
    pub omega: DMatrix<T>,
    pub iterations: usize,
    /// `max_i ‖P̆_i^{(t+1)} − P̆_i^{(t)}‖₂` for each iteration.
    pub residuals: Vec<f64>,
    /// Smallest eigenvalue of any `P̆_i^{(t+1)} − P̆_i^{(t)}` seen.
    pub min_increment_eigenvalue: f64,
}

/// Iterates the time-invariant design step from `P̆ = N Q` to its fixed point.
pub fn solve_stationary<T: Real, W: FusionWeights<T> + ?Sized>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    w: &W,
    tol: T,
    max_iters: usize,
) -> Result<StationaryTables<T>, RecursionError> {
    if !s.is_time_invariant() {
        return Err(ModelError::NotTimeInvariant.into());
    }
    check_pair(s, g)?;
    let agents = s.n_agents();
    let nq = s.q(0) * lit::<T>(agents as f64);
    let a = s.a(0);
    let neighbors: Vec<Vec<usize>> = (0..agents).map(|i| g.in_neighbors(i)).collect();
    let mut omega = DMatrix::zeros(agents, agents);
    for (i, j) in g.edges() {
        let wij = w.weight(0, i, j);
        check_weight(g, i, j, wij)?;
        omega[(i, j)] = wij;
    }

    let mut breve = vec![nq.clone(); agents];
    let mut residuals = Vec::new();
    let mut min_inc = f64::INFINITY;
    for iter in 1..=max_iters {
        let mut bars = Vec::with_capacity(agents);
        let mut bar_invs = Vec::with_capacity(agents);
        for (i, pb) in breve.iter().enumerate() {
            let (bar, bar_inv) =
                local_p_bar(pb, &s.b(0, i), s.r(0, i)).ok_or(RecursionError::Breakdown {
                    what: "P̄",
                    k: iter,
                    i,
                })?;
            bars.push(bar);
            bar_invs.push(bar_inv);
        }
        let mut next = Vec::with_capacity(agents);
        let mut residual = T::zero();
        for i in 0..agents {
            let inbox: Vec<(T, &DMatrix<T>)> = neighbors[i]
                .iter()
                .map(|&j| (omega[(i, j)], &bar_invs[j]))
                .collect();
            let pi = fuse(&inbox).ok_or(RecursionError::Breakdown {
                what: "P",
                k: iter,
                i,
            })?;
            let nb = symmetrize(&(a.transpose() * &pi * a + &nq));
            let diff = &nb - &breve[i];
            residual = residual.max(spectral_norm(&diff));
            min_inc = min_inc.min(to_f64(lambda_min(&diff)));
            next.push(nb);
        }
        breve = next;
        let res = to_f64(residual);
        residuals.push(res);
        if !res.is_finite() {
            break;
        }
        if residual < tol {
            // P̄ consistent with the returned P̆
            let mut bars = Vec::with_capacity(agents);
            let mut bar_invs = Vec::with_capacity(agents);
            for (i, pb) in breve.iter().enumerate() {
                let (bar, bar_inv) =
                    local_p_bar(pb, &s.b(0, i), s.r(0, i)).ok_or(RecursionError::Breakdown {
                        what: "P̄",
                        k: iter,
                        i,
                    })?;
                bars.push(bar);
                bar_invs.push(bar_inv);
            }
            let mut p = Vec::with_capacity(agents);
            for i in 0..agents {
                let inbox: Vec<(T, &DMatrix<T>)> = neighbors[i]
                    .iter()
                    .map(|&j| (omega[(i, j)], &bar_invs[j]))
                    .collect();
                p.push(fuse(&inbox).ok_or(RecursionError::Breakdown {
                    what: "P",
                    k: iter,
                    i,
                })?);
            }
            return Ok(StationaryTables {
                p,
                p_breve: breve,
                p_bar: bars,
                p_bar_inv: bar_invs,
                omega,
                iterations: iter,
                residuals,
                min_increment_eigenvalue: min_inc,
            });
        }
    }
    Err(RecursionError::NonConvergence {
        iterations: residuals.len(),
        last: residuals.last().copied().unwrap_or(f64::NAN),
        history: residuals,
    })
}

/// Eigenvalue extremes of the design tables against the analytic lower bound
/// `ρ = (n_m/κ_Q + n_m N κ_B²/κ_R)⁻¹` on every `P_{k,i}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BoundednessReport {
    pub min_lambda_p: f64,
    pub max_lambda_p: f64,
    pub max_lambda_p_breve: f64,
    pub max_lambda_p_bar: f64,
    pub max_weight: f64,
    pub rho_lower: f64,
    pub lower_bound_violated: bool,
    /// Every table entry is finite and positive definite and the lower bound holds.
    pub uniformly_bounded: bool,
}

/// Checks the tables against the lower bound computed from the schedule's constants.
///
/// `κ_Q` and `κ_R` are the smallest eigenvalues of `Q_k` and `R_{k,i}` and `κ_B`
/// the largest `‖B_{k,i}‖₂` over the horizon.
pub fn boundedness_report<T: Real>(
    t: &RecursionTables<T>,
    s: &SystemSchedule<T>,
) -> Result<BoundednessReport, RecursionError> {
    let consts = s.validate()?;
    let agents = t.n_agents();
    let mut min_p = f64::INFINITY;
    let mut max_p = 0.0f64;
    let mut max_breve = 0.0f64;
    let mut max_bar = 0.0f64;
    let mut n_m = 0.0f64;
    let mut finite = true;
    for k in t.start + 1..=t.end {
        n_m = n_m.max(to_f64(t.omega(k).iter().fold(T::zero(), |a, &v| a.max(v))));
        for i in 0..agents {
            let lo = to_f64(lambda_min(t.p(k, i)));
            let hi = to_f64(lambda_max(t.p(k, i)));
            finite &= lo.is_finite() && hi.is_finite() && lo > 0.0;
            min_p = min_p.min(lo);
            max_p = max_p.max(hi);
            max_bar = max_bar.max(to_f64(lambda_max(t.p_bar(k, i))));
        }
    }
    for k in t.start..=t.end {
        for i in 0..agents {
            let hi = to_f64(lambda_max(t.p_breve(k, i)));
            finite &= hi.is_finite();
            max_breve = max_breve.max(hi);
        }
    }
    let rho = lower_bound_rho(n_m, agents, &consts);
    let violated = min_p < rho - 1e-10;
    Ok(BoundednessReport {
        min_lambda_p: min_p,
        max_lambda_p: max_p,
        max_lambda_p_breve: max_breve,
        max_lambda_p_bar: max_bar,
        max_weight: n_m,
        rho_lower: rho,
        lower_bound_violated: violated,
        uniformly_bounded: finite && !violated,
    })
}

/// `(n_m/κ_Q + n_m N κ_B²/κ_R)⁻¹`.
pub fn lower_bound_rho(
    max_weight: f64,
    agents: usize,
    consts: &crate::model::ScheduleReport,
) -> f64 {
    let kb2 = consts.b_norm_max * consts.b_norm_max;
    1.0 / (max_weight / consts.q_eig_min + max_weight * agents as f64 * kb2 / consts.r_eig_min)
}
