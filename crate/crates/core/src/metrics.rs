//! Costs, bounds and per-run summaries.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::controller::{Trajectory, VirtualStateSet};
use crate::linalg::quad_form;
use crate::model::SystemSchedule;
use crate::recursion::{RecursionTables, StationaryTables};
use crate::scalar::{lit, to_f64, CompensatedSum, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trajectory has {got} steps but the horizon is {horizon}")]
    LengthMismatch { got: usize, horizon: usize },
    #[error("trajectory has {states} states for {inputs} input steps")]
    Malformed { states: usize, inputs: usize },
    #[error("virtual history has {got} entries, expected {expected}")]
    HistoryLength { got: usize, expected: usize },
    #[error("{got} cost shares for {agents} agents")]
    ShareCount { got: usize, agents: usize },
}

fn check_lengths<T: Real>(
    traj: &Trajectory<T>,
    s: &SystemSchedule<T>,
) -> Result<usize, MetricsError> {
    let steps = traj.steps();
    if traj.states.len() != steps + 1 {
        return Err(MetricsError::Malformed {
            states: traj.states.len(),
            inputs: steps,
        });
    }
    if let Some(h) = s.horizon() {
        if steps != h {
            return Err(MetricsError::LengthMismatch {
                got: steps,
                horizon: h,
            });
        }
    }
    Ok(steps)
}

/// `J = Σ_{k=0}^{M} x_kᵀQ_kx_k + Σ_{k<M} Σ_i u_{k,i}ᵀR_{k,i}u_{k,i}`.
///
/// For an infinite-horizon schedule the sum runs over the trajectory length.
pub fn realized_cost<T: Real>(
    traj: &Trajectory<T>,
    s: &SystemSchedule<T>,
) -> Result<T, MetricsError> {
    let steps = check_lengths(traj, s)?;
    let mut acc = CompensatedSum::default();
    for (k, x) in traj.states.iter().enumerate() {
        acc.add(quad_form(s.q(k), x));
    }
    for k in 0..steps {
        for (i, u) in traj.inputs[k].iter().enumerate() {
            acc.add(quad_form(s.r(k, i), u));
        }
    }
    Ok(acc.total())
}

/// `Ĵ = Σ_i [Σ_k x_{k,i}ᵀ(N Q_k)x_{k,i} + Σ_{k<M} u_{k,i}ᵀR_{k,i}u_{k,i}]`.
pub fn surrogate_cost<T: Real>(
    history: &[VirtualStateSet<T>],
    traj: &Trajectory<T>,
    s: &SystemSchedule<T>,
) -> Result<T, MetricsError> {
    let steps = check_lengths(traj, s)?;
    if history.len() != steps + 1 {
        return Err(MetricsError::HistoryLength {
            got: history.len(),
            expected: steps + 1,
        });
    }
    let n = lit::<T>(s.n_agents() as f64);
    let mut acc = CompensatedSum::default();
    for set in history {
        let nq = s.q(set.k) * n;
        for x in &set.states {
            acc.add(quad_form(&nq, x));
        }
    }
    for k in 0..steps {
        for (i, u) in traj.inputs[k].iter().enumerate() {
            acc.add(quad_form(s.r(k, i), u));
        }
    }
    Ok(acc.total())
}

/// Anything that provides the per-agent `P̆_{0,i}`.
pub trait InitialCostMatrices<T: Real> {
    fn n_agents(&self) -> usize;
    fn initial_p_breve(&self, i: usize) -> &DMatrix<T>;
}

impl<T: Real> InitialCostMatrices<T> for RecursionTables<T> {
    fn n_agents(&self) -> usize {
        RecursionTables::n_agents(self)
    }

    fn initial_p_breve(&self, i: usize) -> &DMatrix<T> {
        self.p_breve(self.start(), i)
    }
}

impl<T: Real> InitialCostMatrices<T> for StationaryTables<T> {
    fn n_agents(&self) -> usize {
        self.p_breve.len()
    }

    fn initial_p_breve(&self, i: usize) -> &DMatrix<T> {
        &self.p_breve[i]
    }
}

/// `J^bound = (1/N²) Σ_i x_0ᵀ P̆_{0,i} x_0`.
pub fn performance_bound<T: Real, P: InitialCostMatrices<T> + ?Sized>(
    tables: &P,
    x0: &DVector<T>,
) -> T {
    let agents = tables.n_agents();
    let mut acc = CompensatedSum::default();
    for i in 0..agents {
        acc.add(quad_form(tables.initial_p_breve(i), x0));
    }
    acc.total() / lit::<T>((agents * agents) as f64)
}

/// Splits the cost into `J_{M,i} = Σ_k x_kᵀ(π_iQ_k)x_k + Σ_k u_{k,i}ᵀR_{k,i}u_{k,i}`.
///
/// The shares sum to [`realized_cost`] when `Σ π_i = 1`.
pub fn cost_decomposition<T: Real>(
    traj: &Trajectory<T>,
    s: &SystemSchedule<T>,
    pi: &[T],
) -> Result<Vec<T>, MetricsError> {
    let steps = check_lengths(traj, s)?;
    if pi.len() != s.n_agents() {
        return Err(MetricsError::ShareCount {
            got: pi.len(),
            agents: s.n_agents(),
        });
    }
    let mut state_cost = CompensatedSum::default();
    for (k, x) in traj.states.iter().enumerate() {
        state_cost.add(quad_form(s.q(k), x));
    }
    let state_cost = state_cost.total();
    Ok(pi
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut acc = CompensatedSum::default();
            acc.add(state_cost * p);
            for k in 0..steps {
                acc.add(quad_form(s.r(k, i), &traj.inputs[k][i]));
            }
            acc.total()
        })
        .collect())
}

/// Uniform shares `π_i = 1/N`.
pub fn uniform_shares<T: Real>(agents: usize) -> Vec<T> {
    vec![T::one() / lit::<T>(agents as f64); agents]
}

/// Serializable summary of one controller run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CostReport {
    pub controller: String,
    pub cost: f64,
    pub surrogate: Option<f64>,
    pub bound: Option<f64>,
    pub per_agent: Vec<f64>,
    pub messages_per_step: f64,
    pub total_messages: usize,
    pub final_state_inf_norm: f64,
    pub diverged: bool,
}

impl CostReport {
    pub fn new<T: Real>(
        controller: &str,
        traj: &Trajectory<T>,
        s: &SystemSchedule<T>,
    ) -> Result<Self, MetricsError> {
        let cost = to_f64(realized_cost(traj, s)?);
        let per_agent = cost_decomposition(traj, s, &uniform_shares(s.n_agents()))?
            .into_iter()
            .map(to_f64)
            .collect();
        let steps = traj.steps().max(1);
        Ok(Self {
            controller: controller.to_string(),
            cost,
            surrogate: None,
            bound: None,
            per_agent,
            messages_per_step: traj.total_messages() as f64 / steps as f64,
            total_messages: traj.total_messages(),
            final_state_inf_norm: to_f64(traj.final_state().amax()),
            diverged: !cost.is_finite(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{run_closed_loop, RunOptions};
    use crate::graph::WeightMatrix;
    use crate::presets;
    use crate::recursion::design_backward;
    use nalgebra::dmatrix;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_cost_by_hand() {
        let s = SystemSchedule::time_invariant(
            scalar(1.0),
            vec![scalar(1.0)],
            scalar(1.0),
            vec![scalar(1.0)],
            Some(1),
        )
        .unwrap();
        let traj = Trajectory {
            states: vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)],
            inputs: vec![vec![DVector::from_element(1, -0.5)]],
            messages_per_step: vec![0],
        };
        assert_eq!(realized_cost(&traj, &s).unwrap(), 1.5);
    }

    #[test]
    fn zero_state_zero_input() {
        let p = presets::part1();
        let traj = Trajectory {
            states: vec![DVector::zeros(8); 121],
            inputs: vec![vec![DVector::zeros(1); 8]; 120],
            messages_per_step: vec![0; 120],
        };
        assert_eq!(realized_cost(&traj, &p.schedule).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        let p = presets::part1();
        let traj = Trajectory {
            states: vec![DVector::zeros(8); 3],
            inputs: vec![vec![DVector::zeros(1); 8]; 2],
            messages_per_step: vec![0; 2],
        };
        assert_eq!(
            realized_cost(&traj, &p.schedule).unwrap_err(),
            MetricsError::LengthMismatch {
                got: 2,
                horizon: 120
            }
        );
    }

    #[test]
    fn ordering_and_shares_part1() {
        let p = presets::part1();
        let w = WeightMatrix::default_for(&p.graph);
        let tables = design_backward(&p.schedule, &p.graph, &w).unwrap();
        let run = run_closed_loop(
            &p.schedule,
            &p.graph,
            &tables,
            &p.x0,
            RunOptions { keep_virtual: true },
        )
        .unwrap();
        let j = realized_cost(&run.trajectory, &p.schedule).unwrap();
        let hat = surrogate_cost(
            run.virtual_history.as_ref().unwrap(),
            &run.trajectory,
            &p.schedule,
        )
        .unwrap();
        let bound = performance_bound(&tables, &p.x0);
        assert!(j <= hat * (1.0 + 1e-12));
        assert!(hat <= bound * (1.0 + 1e-12));
        let shares = cost_decomposition(&run.trajectory, &p.schedule, &uniform_shares(8)).unwrap();
        let total: f64 = shares.iter().sum();
        assert!((total - j).abs() <= 1e-9 * j);
    }

    #[test]
    fn report_serializes() {
        let s = SystemSchedule::time_invariant(
            dmatrix![1.0],
            vec![dmatrix![1.0]],
            dmatrix![1.0],
            vec![dmatrix![1.0]],
            Some(1),
        )
        .unwrap();
        let traj = Trajectory {
            states: vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)],
            inputs: vec![vec![DVector::from_element(1, -0.5)]],
            messages_per_step: vec![0],
        };
        let r = CostReport::new("fdcc", &traj, &s).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["cost"], 1.5);
        assert_eq!(json["diverged"], false);
    }
}
