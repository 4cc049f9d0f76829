//! Forward performing phase: virtual states, distributed gains and closed loops.
//!
//! Before the first step the agents reverse every communication edge. Agent `i`
//! then keeps a virtual state `x_{k,i}` (initialized to `x_0/N`), receives
//! `P_{k+1,j} A_k x_{k,j}` from each in-neighbor `j` of the reversed graph, forms
//!
//! ```text
//! f_{k,i}   = P̄_{k+1,i}⁻¹ Σ_{j∈N̄_i} ω_ji P_{k+1,j} A_k x_{k,j}
//! u_{k,i}   = K_{k,i} f_{k,i},   K_{k,i} = −(R_{k,i} + B_{k,i}ᵀ P̆_{k+1,i} B_{k,i})⁻¹ B_{k,i}ᵀ P̆_{k+1,i}
//! x_{k+1,i} = f_{k,i} + B_{k,i} u_{k,i}
//! ```
//!
//! and the virtual states keep summing to the plant state.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{DirectedGraph, FusionWeights};
use crate::linalg::symmetrize;
use crate::model::{ModelError, SystemSchedule};
use crate::recursion::{
    check_pair, design_segment, RecursionError, RecursionTables, StationaryTables,
};
use crate::scalar::{lit, to_f64, Real};

/// Relative tolerance on `‖x_k − Σ_i x_{k,i}‖₂ / (1 + ‖x_k‖₂)`.
pub const VIRTUAL_SUM_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error(transparent)]
    Recursion(#[from] RecursionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("agent {agent} inbox does not match its reversed-graph in-neighbors (missing {missing:?}, unexpected {unexpected:?})")]
    Locality {
        agent: usize,
        missing: Vec<usize>,
        unexpected: Vec<usize>,
    },
    #[error(
        "virtual states drifted from the plant state at step {k} (relative residual {residual:e})"
    )]
    Consistency { k: usize, residual: f64 },
    #[error("gain of agent {i} at step {k} could not be formed")]
    Gain { k: usize, i: usize },
    #[error("initial state has length {found}, expected {expected}")]
    InitialState { expected: usize, found: usize },
    #[error("tables cover steps {start}..{end}, run needs {needed}")]
    TableRange {
        start: usize,
        end: usize,
        needed: usize,
    },
    #[error("receding window {window} is shorter than N + L = {minimum}")]
    Window { window: usize, minimum: usize },
}

/// Plant states, per-agent inputs and message counts of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    /// `x_0, …, x_M`.
    pub states: Vec<DVector<T>>,
    /// `inputs[k][i] = u_{k,i}` for `k < M`.
    pub inputs: Vec<Vec<DVector<T>>>,
    /// Messages exchanged during each performing step.
    pub messages_per_step: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// `u_k = [u_{k,1}; …; u_{k,N}]`.
    pub fn stacked_input(&self, k: usize) -> DVector<T> {
        crate::linalg::vstack(&self.inputs[k])
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn total_messages(&self) -> usize {
        self.messages_per_step.iter().sum()
    }

    /// Largest `‖x_{k+1} − A_k x_k − Σ_i B_{k,i} u_{k,i}‖₂` when replaying the inputs.
    pub fn replay_residual(&self, s: &SystemSchedule<T>) -> T {
        let mut worst = T::zero();
        for k in 0..self.steps() {
            let mut next = s.a(k) * &self.states[k];
            for (i, u) in self.inputs[k].iter().enumerate() {
                next += &*s.b(k, i) * u;
            }
            worst = worst.max((next - &self.states[k + 1]).norm());
        }
        worst
    }
}

/// Per-agent virtual states at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualStateSet<T: Real> {
    pub k: usize,
    pub states: Vec<DVector<T>>,
}

impl<T: Real> VirtualStateSet<T> {
    /// `x_{k,i} = x / N` for every agent.
    pub fn split(k: usize, x: &DVector<T>, agents: usize) -> Self {
        let share = x / lit::<T>(agents as f64);
        Self {
            k,
            states: vec![share; agents],
        }
    }

    pub fn sum(&self) -> DVector<T> {
        let mut acc = DVector::zeros(self.states[0].len());
        for x in &self.states {
            acc += x;
        }
        acc
    }
}

/// Result of a closed-loop run of the distributed controller.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun<T: Real> {
    pub trajectory: Trajectory<T>,
    /// Virtual states for every step, when requested.
    pub virtual_history: Option<Vec<VirtualStateSet<T>>>,
    /// Worst `‖x_k − Σ_i x_{k,i}‖₂ / (1 + ‖x_k‖₂)` observed.
    pub max_virtual_residual: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub keep_virtual: bool,
}

/// `K_{k,i} = −(R + Bᵀ P̆ B)⁻¹ Bᵀ P̆`.
pub fn distributed_gain<T: Real>(
    p_breve_next: &DMatrix<T>,
    b: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Option<DMatrix<T>> {
    let bt_p = b.transpose() * p_breve_next;
    let inner = symmetrize(&(r + &bt_p * b));
    let chol = inner.cholesky()?;
    Some(-chol.solve(&bt_p))
}

/// Vector message `P_{k+1,j} A_k x_{k,j}` from agent `j`, scaled on receipt by `ω_ji`.
#[derive(Debug, Clone, Copy)]
pub struct NeighborMessage<'a, T: Real> {
    pub from: usize,
    pub p_next: &'a DMatrix<T>,
    pub x: &'a DVector<T>,
}

/// Fused vector `P̄_{k+1,i}⁻¹ Σ_j ω_ji P_{k+1,j} A_k x_{k,j}` over the reversed graph.
///
/// The inbox must hold exactly one message from each reversed-graph in-neighbor.
pub fn fusion_term<T: Real>(
    agent: usize,
    reversed: &DirectedGraph,
    inbox: &[NeighborMessage<'_, T>],
    p_bar_inv_next: &DMatrix<T>,
    a: &DMatrix<T>,
    omega_next: &DMatrix<T>,
) -> Result<DVector<T>, ControllerError> {
    let expected: BTreeSet<usize> = reversed.in_neighbors(agent).into_iter().collect();
    let got: BTreeSet<usize> = inbox.iter().map(|m| m.from).collect();
    if expected != got || got.len() != inbox.len() {
        return Err(ControllerError::Locality {
            agent,
            missing: expected.difference(&got).copied().collect(),
            unexpected: got.difference(&expected).copied().collect(),
        });
    }
    let mut acc = DVector::zeros(p_bar_inv_next.nrows());
    for m in inbox {
        // ω_ji: weight agent j placed on agent i when fusing in the design phase
        let w = omega_next[(m.from, agent)];
        acc += m.p_next * (a * m.x) * w;
    }
    Ok(p_bar_inv_next * acc)
}

/// Design tables as seen by the performing phase at step `k`.
pub trait PerformTables<T: Real> {
    fn p_next(&self, k: usize, i: usize) -> &DMatrix<T>;
    fn p_bar_inv_next(&self, k: usize, i: usize) -> &DMatrix<T>;
    fn p_breve_next(&self, k: usize, i: usize) -> &DMatrix<T>;
    fn omega_next(&self, k: usize) -> &DMatrix<T>;
}

impl<T: Real> PerformTables<T> for RecursionTables<T> {
    fn p_next(&self, k: usize, i: usize) -> &DMatrix<T> {
        self.p(k + 1, i)
    }
    fn p_bar_inv_next(&self, k: usize, i: usize) -> &DMatrix<T> {
        self.p_bar_inv(k + 1, i)
    }
    fn p_breve_next(&self, k: usize, i: usize) -> &DMatrix<T> {
        self.p_breve(k + 1, i)
    }
    fn omega_next(&self, k: usize) -> &DMatrix<T> {
        self.omega(k + 1)
    }
}

impl<T: Real> PerformTables<T> for StationaryTables<T> {
    fn p_next(&self, _k: usize, i: usize) -> &DMatrix<T> {
        &self.p[i]
    }
    fn p_bar_inv_next(&self, _k: usize, i: usize) -> &DMatrix<T> {
        &self.p_bar_inv[i]
    }
    fn p_breve_next(&self, _k: usize, i: usize) -> &DMatrix<T> {
        &self.p_breve[i]
    }
    fn omega_next(&self, _k: usize) -> &DMatrix<T> {
        &self.omega
    }
}

/// One agent's input and next virtual state at step `k`.
///
/// Only the reversed-graph in-neighbors' entries of `states` are read.
pub fn agent_step<T: Real, P: PerformTables<T> + ?Sized>(
    agent: usize,
    k: usize,
    s: &SystemSchedule<T>,
    reversed: &DirectedGraph,
    tables: &P,
    states: &[DVector<T>],
) -> Result<(DVector<T>, DVector<T>), ControllerError> {
    let inbox: Vec<NeighborMessage<'_, T>> = reversed
        .in_neighbors(agent)
        .into_iter()
        .map(|j| NeighborMessage {
            from: j,
            p_next: tables.p_next(k, j),
            x: &states[j],
        })
        .collect();
    let fused = fusion_term(
        agent,
        reversed,
        &inbox,
        tables.p_bar_inv_next(k, agent),
        s.a(k),
        tables.omega_next(k),
    )?;
    let b = s.b(k, agent);
    let gain = distributed_gain(tables.p_breve_next(k, agent), &b, s.r(k, agent))
        .ok_or(ControllerError::Gain { k, i: agent })?;
    let u = &gain * &fused;
    let next = fused + &*b * &u;
    Ok((u, next))
}

fn relative_residual<T: Real>(x: &DVector<T>, v: &VirtualStateSet<T>) -> f64 {
    let num = to_f64((x - v.sum()).norm());
    num / (1.0 + to_f64(x.norm()))
}

/// Simulates steps `[t0, t1)` of plant and virtual systems, appending to `out`.
/// With `strict`, a virtual-sum residual above tolerance aborts the run.
#[allow(clippy::too_many_arguments)]
fn perform<T: Real, P: PerformTables<T> + ?Sized>(
    s: &SystemSchedule<T>,
    reversed: &DirectedGraph,
    tables: &P,
    t0: usize,
    t1: usize,
    out: &mut Trajectory<T>,
    history: &mut Option<Vec<VirtualStateSet<T>>>,
    worst: &mut f64,
    strict: bool,
) -> Result<(), ControllerError> {
    let agents = s.n_agents();
    let messages = reversed.edge_count_without_self_loops();
    let mut virt = VirtualStateSet::split(t0, out.final_state(), agents);
    *worst = worst.max(relative_residual(out.final_state(), &virt));
    if let Some(h) = history.as_mut() {
        h.push(virt.clone());
    }
    for k in t0..t1 {
        let mut inputs = Vec::with_capacity(agents);
        let mut next = Vec::with_capacity(agents);
        for i in 0..agents {
            let (u, xi) = agent_step(i, k, s, reversed, tables, &virt.states)?;
            inputs.push(u);
            next.push(xi);
        }
        let mut x = s.a(k) * out.final_state();
        for (i, u) in inputs.iter().enumerate() {
            x += &*s.b(k, i) * u;
        }
        virt = VirtualStateSet {
            k: k + 1,
            states: next,
        };
        let residual = relative_residual(&x, &virt);
        *worst = worst.max(residual);
        if strict && !(residual <= VIRTUAL_SUM_TOL) {
            return Err(ControllerError::Consistency { k: k + 1, residual });
        }
        if let Some(h) = history.as_mut() {
            h.push(virt.clone());
        }
        out.states.push(x);
        out.inputs.push(inputs);
        out.messages_per_step.push(messages);
    }
    Ok(())
}

fn check_x0<T: Real>(s: &SystemSchedule<T>, x0: &DVector<T>) -> Result<(), ControllerError> {
    if x0.len() != s.state_dim() {
        return Err(ControllerError::InitialState {
            expected: s.state_dim(),
            found: x0.len(),
        });
    }
    Ok(())
}

fn empty_trajectory<T: Real>(x0: &DVector<T>) -> Trajectory<T> {
    Trajectory {
        states: vec![x0.clone()],
        inputs: Vec::new(),
        messages_per_step: Vec::new(),
    }
}

/// Runs the distributed controller over the full horizon of `tables`.
pub fn run_closed_loop<T: Real>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    tables: &RecursionTables<T>,
    x0: &DVector<T>,
    opts: RunOptions,
) -> Result<ClosedLoopRun<T>, ControllerError> {
    let m = s.finite_horizon()?;
    check_pair(s, g)?;
    check_x0(s, x0)?;
    if tables.start() != 0 || tables.end() != m {
        return Err(ControllerError::TableRange {
            start: tables.start(),
            end: tables.end(),
            needed: m,
        });
    }
    let reversed = g.reverse();
    let mut traj = empty_trajectory(x0);
    let mut history = opts.keep_virtual.then(Vec::new);
    let mut worst = 0.0;
    perform(
        s,
        &reversed,
        tables,
        0,
        m,
        &mut traj,
        &mut history,
        &mut worst,
        true,
    )?;
    Ok(ClosedLoopRun {
        trajectory: traj,
        virtual_history: history,
        max_virtual_residual: worst,
    })
}

/// Runs `steps` steps with the stationary (infinite-horizon) tables.
///
/// The virtual-sum residual is recorded but not enforced: over thousands of
/// steps, round-off in the plant state grows along unstable open-loop modes
/// that the virtual states never see.
pub fn run_stationary<T: Real>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    tables: &StationaryTables<T>,
    x0: &DVector<T>,
    steps: usize,
    opts: RunOptions,
) -> Result<ClosedLoopRun<T>, ControllerError> {
    if !s.is_time_invariant() {
        return Err(ModelError::NotTimeInvariant.into());
    }
    check_pair(s, g)?;
    check_x0(s, x0)?;
    let reversed = g.reverse();
    let mut traj = empty_trajectory(x0);
    let mut history = opts.keep_virtual.then(Vec::new);
    let mut worst = 0.0;
    perform(
        s,
        &reversed,
        tables,
        0,
        steps,
        &mut traj,
        &mut history,
        &mut worst,
        false,
    )?;
    Ok(ClosedLoopRun {
        trajectory: traj,
        virtual_history: history,
        max_virtual_residual: worst,
    })
}

/// Interval partition `[0, w], [w, 2w], …, [ξw, M]` of the horizon.
pub fn receding_intervals(horizon: usize, window: usize) -> Vec<(usize, usize)> {
    let mut bounds: Vec<usize> = (0..horizon).step_by(window.max(1)).collect();
    bounds.push(horizon);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

#[derive(Debug, Clone)]
pub struct RecedingRun<T: Real> {
    pub trajectory: Trajectory<T>,
    pub intervals: Vec<(usize, usize)>,
    pub segments: Vec<RecursionTables<T>>,
    pub max_virtual_residual: f64,
}

/// Re-anchors the virtual states to the measured plant state every `window` steps.
///
/// Each interval's terminal matrix is `N Q̄` with
/// `Q̄ = Q + (1/N) Σ_i Aᵀ P_{·+1,i} A` taken from the following interval's tables.
/// `controllability_window` is the `L` of the joint-controllability condition.
pub fn run_receding_horizon<T: Real, W: FusionWeights<T> + ?Sized>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    w: &W,
    x0: &DVector<T>,
    window: usize,
    controllability_window: usize,
) -> Result<RecedingRun<T>, ControllerError> {
    let m = s.finite_horizon()?;
    check_pair(s, g)?;
    check_x0(s, x0)?;
    let agents = s.n_agents();
    let minimum = agents + controllability_window;
    if window < minimum {
        return Err(ControllerError::Window { window, minimum });
    }
    let intervals = receding_intervals(m, window);
    let n = lit::<T>(agents as f64);

    let mut segments: Vec<RecursionTables<T>> = Vec::with_capacity(intervals.len());
    let mut terminal = vec![s.q(m) * n; agents];
    for &(t0, t1) in intervals.iter().rev() {
        let seg = design_segment(s, g, t0, t1, terminal, |ctx| {
            Ok(ctx
                .neighbors
                .iter()
                .map(|&j| w.weight(ctx.k, ctx.agent, j))
                .collect())
        })?;
        if t0 > 0 {
            let a = s.a(t0);
            let mut nq_bar = s.q(t0) * n;
            for i in 0..agents {
                nq_bar += a.transpose() * seg.p(t0 + 1, i) * a;
            }
            terminal = vec![symmetrize(&nq_bar); agents];
        } else {
            terminal = Vec::new();
        }
        segments.push(seg);
    }
    segments.reverse();

    let reversed = g.reverse();
    let mut traj = empty_trajectory(x0);
    let mut history = None;
    let mut worst = 0.0;
    for (seg, &(t0, t1)) in segments.iter().zip(&intervals) {
        perform(
            s,
            &reversed,
            seg,
            t0,
            t1,
            &mut traj,
            &mut history,
            &mut worst,
            true,
        )?;
    }
    Ok(RecedingRun {
        trajectory: traj,
        intervals,
        segments,
        max_virtual_residual: worst,
    })
}
