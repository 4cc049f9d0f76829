//! Comparison controllers: centralized optimal LQR, per-agent decentralized LQR,
//! and a consensus-fused LQR with a finite number of averaging rounds.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::controller::Trajectory;
use crate::graph::DirectedGraph;
use crate::linalg::{lambda_max, spd_inverse, symmetrize};
use crate::model::{ModelError, SystemSchedule};
use crate::recursion::local_p_bar;
use crate::scalar::{lit, to_f64, Real};

/// Growth of `λ_max(P_{k,i}) / λ_max(Q_M)` past which a decentralized agent is
/// reported as diverged.
pub const DIVERGENCE_GROWTH: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{what} breakdown at step {k} (agent {i:?})")]
    Breakdown {
        what: &'static str,
        k: usize,
        i: Option<usize>,
    },
    #[error("pi weights must be positive and sum to one")]
    InvalidPi,
    #[error("consensus needs at least one averaging round")]
    NoRounds,
    #[error("graph has {graph} nodes but the schedule has {agents} agents")]
    AgentCount { graph: usize, agents: usize },
}

/// Riccati tables of the centralized solution.
#[derive(Debug, Clone)]
pub struct CentralizedTables<T: Real> {
    /// `P_k` for `k = 0..=M`.
    pub p: Vec<DMatrix<T>>,
    /// `K_k` for `k = 0..M`, acting on the full state.
    pub gains: Vec<DMatrix<T>>,
}

/// Finite-horizon LQR with every input matrix known: `P_M = Q_M`,
/// `K_k = −(B_kᵀP_{k+1}B_k + R_k)⁻¹B_kᵀP_{k+1}A_k`,
/// `P_k = A_kᵀ(P_{k+1}⁻¹ + B_kR_k⁻¹B_kᵀ)⁻¹A_k + Q_k`.
pub fn centralized_design<T: Real>(
    s: &SystemSchedule<T>,
) -> Result<CentralizedTables<T>, BaselineError> {
    let m = s.finite_horizon()?;
    let mut p = vec![DMatrix::zeros(0, 0); m + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); m];
    p[m] = s.q(m).clone();
    for k in (0..m).rev() {
        let a = s.a(k);
        let b = s.stacked_b(k);
        let r = s.block_r(k);
        gains[k] = lqr_gain(&p[k + 1], &b, &r, a).ok_or(BaselineError::Breakdown {
            what: "centralized gain",
            k,
            i: None,
        })?;
        let (bar, _) = local_p_bar(&p[k + 1], &b, &r).ok_or(BaselineError::Breakdown {
            what: "centralized P",
            k,
            i: None,
        })?;
        p[k] = symmetrize(&(a.transpose() * bar * a + s.q(k)));
    }
    Ok(CentralizedTables { p, gains })
}

fn lqr_gain<T: Real>(
    p_next: &DMatrix<T>,
    b: &DMatrix<T>,
    r: &DMatrix<T>,
    a: &DMatrix<T>,
) -> Option<DMatrix<T>> {
    let bt_p = b.transpose() * p_next;
    let chol = symmetrize(&(&bt_p * b + r)).cholesky()?;
    Some(-chol.solve(&(bt_p * a)))
}

fn split_input<T: Real>(s: &SystemSchedule<T>, u: &DVector<T>) -> Vec<DVector<T>> {
    let mut out = Vec::with_capacity(s.n_agents());
    let mut row = 0;
    for i in 0..s.n_agents() {
        let m = s.input_dim(i);
        out.push(u.rows(row, m).into_owned());
        row += m;
    }
    out
}

/// Centralized design followed by the closed loop `u_k = K_k x_k`.
///
/// Communication is modeled as one state broadcast per agent per step.
pub fn centralized_design_and_run<T: Real>(
    s: &SystemSchedule<T>,
    x0: &DVector<T>,
) -> Result<(Trajectory<T>, CentralizedTables<T>), BaselineError> {
    let tables = centralized_design(s)?;
    let m = tables.gains.len();
    let mut traj = Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(m),
        messages_per_step: Vec::with_capacity(m),
    };
    for k in 0..m {
        let x = traj.final_state().clone();
        let u = &tables.gains[k] * &x;
        let next = s.a(k) * &x + s.stacked_b(k) * &u;
        traj.inputs.push(split_input(s, &u));
        traj.messages_per_step.push(s.n_agents());
        traj.states.push(next);
    }
    Ok((traj, tables))
}

/// Fixed point of the time-invariant centralized Riccati iteration.
pub fn centralized_stationary<T: Real>(
    s: &SystemSchedule<T>,
    tol: T,
    max_iters: usize,
) -> Result<DMatrix<T>, BaselineError> {
    if !s.is_time_invariant() {
        return Err(ModelError::NotTimeInvariant.into());
    }
    let a = s.a(0);
    let b = s.stacked_b(0);
    let r = s.block_r(0);
    let mut p = s.q(0).clone();
    for k in 0..max_iters {
        let (bar, _) = local_p_bar(&p, &b, &r).ok_or(BaselineError::Breakdown {
            what: "centralized P",
            k,
            i: None,
        })?;
        let next = symmetrize(&(a.transpose() * bar * a + s.q(0)));
        let done = (&next - &p).amax() < tol;
        p = next;
        if done {
            return Ok(p);
        }
    }
    Err(BaselineError::Breakdown {
        what: "centralized stationary iteration (no convergence)",
        k: max_iters,
        i: None,
    })
}

/// Per-agent Riccati tables of the decentralized scheme.
#[derive(Debug, Clone)]
pub struct DecentralizedTables<T: Real> {
    pub pi: Vec<T>,
    /// `p[k][i] = P_{k,i}`; entries below `first_step` are empty.
    pub p: Vec<Vec<DMatrix<T>>>,
    /// `gains[k][i] = K_{k,i}`, acting on the full state.
    pub gains: Vec<Vec<DMatrix<T>>>,
    /// `lambda_max[i][k] = λ_max(P_{k,i})`, NaN where not computed.
    pub lambda_max: Vec<Vec<f64>>,
    pub diverged: Vec<bool>,
    /// Step at which the backward pass stopped on numerical overflow.
    pub truncated_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DecentralizedRun<T: Real> {
    /// Absent when the design pass was truncated.
    pub trajectory: Option<Trajectory<T>>,
    pub tables: DecentralizedTables<T>,
}

impl<T: Real> DecentralizedRun<T> {
    pub fn any_diverged(&self) -> bool {
        self.tables.diverged.iter().any(|&d| d) || self.tables.truncated_at.is_some()
    }
}

/// Each agent solves its own Riccati recursion with weight `π_i Q_k` and
/// applies `u_{k,i} = K_{k,i} x_k` to the measured plant state.
pub fn decentralized_design_and_run<T: Real>(
    s: &SystemSchedule<T>,
    pi: &[T],
    x0: &DVector<T>,
) -> Result<DecentralizedRun<T>, BaselineError> {
    let m = s.finite_horizon()?;
    let agents = s.n_agents();
    let sum = pi.iter().fold(T::zero(), |a, &v| a + v);
    if pi.len() != agents
        || pi.iter().any(|&v| v <= T::zero())
        || (sum - T::one()).abs() > lit(1e-12)
    {
        return Err(BaselineError::InvalidPi);
    }
    let scale = to_f64(lambda_max(s.q(m))).max(f64::MIN_POSITIVE);
    let mut p = vec![vec![DMatrix::zeros(0, 0); agents]; m + 1];
    let mut gains = vec![vec![DMatrix::zeros(0, 0); agents]; m];
    let mut lmax = vec![vec![f64::NAN; m + 1]; agents];
    let mut diverged = vec![false; agents];
    let mut truncated_at = None;
    for i in 0..agents {
        p[m][i] = s.q(m).clone();
        lmax[i][m] = to_f64(lambda_max(s.q(m)));
    }
    'outer: for k in (0..m).rev() {
        let a = s.a(k);
        for i in 0..agents {
            let b = s.b(k, i);
            let r = s.r(k, i);
            let next = &p[k + 1][i];
            let step = local_p_bar(next, &b, r).zip(lqr_gain(next, &b, r, a));
            let Some(((bar, _), gain)) = step else {
                truncated_at = Some(k);
                diverged[i] = true;
                break 'outer;
            };
            let pk = symmetrize(&(a.transpose() * bar * a + s.q(k) * pi[i]));
            let lam = to_f64(lambda_max(&pk));
            if !lam.is_finite() || gain.iter().any(|v| !v.is_finite()) {
                truncated_at = Some(k);
                diverged[i] = true;
                break 'outer;
            }
            if lam / scale > DIVERGENCE_GROWTH {
                diverged[i] = true;
            }
            lmax[i][k] = lam;
            p[k][i] = pk;
            gains[k][i] = gain;
        }
    }
    let tables = DecentralizedTables {
        pi: pi.to_vec(),
        p,
        gains,
        lambda_max: lmax,
        diverged,
        truncated_at,
    };
    if truncated_at.is_some() {
        return Ok(DecentralizedRun {
            trajectory: None,
            tables,
        });
    }
    let mut traj = Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(m),
        messages_per_step: Vec::with_capacity(m),
    };
    for k in 0..m {
        let x = traj.final_state().clone();
        let mut next = s.a(k) * &x;
        let mut inputs = Vec::with_capacity(agents);
        for i in 0..agents {
            let u = &tables.gains[k][i] * &x;
            next += &*s.b(k, i) * &u;
            inputs.push(u);
        }
        traj.inputs.push(inputs);
        traj.messages_per_step.push(0);
        traj.states.push(next);
    }
    Ok(DecentralizedRun {
        trajectory: Some(traj),
        tables,
    })
}

#[derive(Debug, Clone)]
pub struct ConsensusRun<T: Real> {
    pub trajectory: Trajectory<T>,
    /// `theta[k][i] = Θ_{k,i}` for `k = 1..=M` (index 0 empty).
    pub theta: Vec<Vec<DMatrix<T>>>,
    pub rounds: usize,
}

/// `rounds` iterations of uniform in-neighborhood averaging (self included).
pub fn average_rounds<T: Real>(
    g: &DirectedGraph,
    values: &[DMatrix<T>],
    rounds: usize,
) -> Vec<DMatrix<T>> {
    let neighbors: Vec<Vec<usize>> = (0..g.n_nodes()).map(|i| g.in_neighbors(i)).collect();
    let mut cur = values.to_vec();
    for _ in 0..rounds {
        cur = neighbors
            .iter()
            .map(|nb| {
                let mut acc = DMatrix::zeros(cur[0].nrows(), cur[0].ncols());
                for &j in nb {
                    acc += &cur[j];
                }
                acc / lit::<T>(nb.len() as f64)
            })
            .collect();
    }
    cur
}

/// Consensus-fused LQR with `rounds` averaging rounds per step.
///
/// Backward pass from `Γ_{M,i} = Q_M`:
/// `Ψ_{k+1,i} = Γ_{k+1,i}⁻¹ + N B_{k,i}R_{k,i}⁻¹B_{k,i}ᵀ`,
/// `Θ_{k+1,i}⁻¹ = average_rounds(Ψ_{k+1,·})`,
/// `Γ_{k,i} = A_kᵀΘ_{k+1,i}A_k + Q_k`; input
/// `u_{k,i} = −R_{k,i}⁻¹B_{k,i}ᵀΘ_{k+1,i}A_k x_k`.
pub fn consensus_design_and_run<T: Real>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    rounds: usize,
    x0: &DVector<T>,
) -> Result<ConsensusRun<T>, BaselineError> {
    if rounds == 0 {
        return Err(BaselineError::NoRounds);
    }
    let m = s.finite_horizon()?;
    let agents = s.n_agents();
    if g.n_nodes() != agents {
        return Err(BaselineError::AgentCount {
            graph: g.n_nodes(),
            agents,
        });
    }
    let nf = lit::<T>(agents as f64);
    let mut theta = vec![Vec::new(); m + 1];
    let mut gamma = vec![s.q(m).clone(); agents];
    for k in (0..m).rev() {
        let mut psi = Vec::with_capacity(agents);
        for (i, gm) in gamma.iter().enumerate() {
            let g_inv = spd_inverse(gm).ok_or(BaselineError::Breakdown {
                what: "Γ",
                k: k + 1,
                i: Some(i),
            })?;
            let b = s.b(k, i);
            let r_inv = spd_inverse(s.r(k, i)).ok_or(BaselineError::Breakdown {
                what: "R",
                k,
                i: Some(i),
            })?;
            psi.push(g_inv + &*b * r_inv * b.transpose() * nf);
        }
        let averaged = average_rounds(g, &psi, rounds);
        let mut th = Vec::with_capacity(agents);
        for (i, z) in averaged.iter().enumerate() {
            th.push(spd_inverse(z).ok_or(BaselineError::Breakdown {
                what: "Θ",
                k: k + 1,
                i: Some(i),
            })?);
        }
        let a = s.a(k);
        gamma = th
            .iter()
            .map(|t| symmetrize(&(a.transpose() * t * a + s.q(k))))
            .collect();
        theta[k + 1] = th;
    }
    let messages = rounds * g.edge_count_without_self_loops();
    let mut traj = Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(m),
        messages_per_step: Vec::with_capacity(m),
    };
    for k in 0..m {
        let x = traj.final_state().clone();
        let ax = s.a(k) * &x;
        let mut next = ax.clone();
        let mut inputs = Vec::with_capacity(agents);
        for i in 0..agents {
            let b = s.b(k, i);
            let r_inv = spd_inverse(s.r(k, i)).ok_or(BaselineError::Breakdown {
                what: "R",
                k,
                i: Some(i),
            })?;
            let u = -(r_inv * b.transpose() * &theta[k + 1][i] * &ax);
            next += &*b * &u;
            inputs.push(u);
        }
        traj.inputs.push(inputs);
        traj.messages_per_step.push(messages);
        traj.states.push(next);
    }
    Ok(ConsensusRun {
        trajectory: traj,
        theta,
        rounds,
    })
}
