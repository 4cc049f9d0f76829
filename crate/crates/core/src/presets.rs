//! Built-in experiment instances: an 8-agent chain and a 50-agent coupled plant.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::DirectedGraph;
use crate::linalg::{reciprocal_condition, spectral_radius};
use crate::model::{InputSchedule, MatrixSeq, SystemSchedule};
use crate::scalar::{lit, Real};

pub const PRESET_HORIZON: usize = 120;

#[derive(Debug, Clone)]
pub struct Preset<T: Real> {
    pub name: &'static str,
    pub schedule: SystemSchedule<T>,
    pub graph: DirectedGraph,
    pub x0: DVector<T>,
}

/// Eight agents, each owning one coordinate of a weakly coupled chain.
///
/// `A = I_8 + 0.02·(superdiagonal)`, `B_i = 0.5·e_i`, `Q = 20·I_8`, `R_i = 30`,
/// `x_0(p) = 3 + 2p` for `p = 1..8`, `M = 120`, directed ring.
pub fn part1_as<T: Real>() -> Preset<T> {
    let n = 8;
    let mut a = DMatrix::<T>::identity(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = lit(0.02);
    }
    let b = (0..n)
        .map(|i| {
            let mut col = DMatrix::zeros(n, 1);
            col[(i, 0)] = lit(0.5);
            MatrixSeq::Constant(col)
        })
        .collect();
    let schedule = SystemSchedule::new(
        MatrixSeq::Constant(a),
        InputSchedule::PerAgent(b),
        MatrixSeq::Constant(DMatrix::identity(n, n) * lit::<T>(20.0)),
        (0..n)
            .map(|_| MatrixSeq::Constant(DMatrix::from_element(1, 1, lit(30.0))))
            .collect(),
        Some(PRESET_HORIZON),
    )
    .expect("part1 dimensions are consistent");
    Preset {
        name: "part1",
        schedule,
        graph: DirectedGraph::ring(n).expect("ring"),
        x0: DVector::from_fn(n, |i, _| lit(3.0 + 2.0 * (i + 1) as f64)),
    }
}

pub fn part1() -> Preset<f64> {
    part1_as()
}

/// Fifty agents on a strongly coupled, unstable plant with time-varying inputs.
///
/// `A = 1.02·I − 0.01·𝟙𝟙ᵀ`, trigonometric single-column `B_{k,i}`,
/// `x_0(p) = 30 + 0.1p`, other weights as in [`part1`], directed ring.
pub fn part2_as<T: Real>() -> Preset<T> {
    let n = 50;
    let a =
        DMatrix::<T>::identity(n, n) * lit::<T>(1.02) - DMatrix::from_element(n, n, lit::<T>(0.01));
    let schedule = SystemSchedule::new(
        MatrixSeq::Constant(a),
        InputSchedule::TrigColumns { n, offset: 2.0 },
        MatrixSeq::Constant(DMatrix::identity(n, n) * lit::<T>(20.0)),
        (0..n)
            .map(|_| MatrixSeq::Constant(DMatrix::from_element(1, 1, lit(30.0))))
            .collect(),
        Some(PRESET_HORIZON),
    )
    .expect("part2 dimensions are consistent");
    Preset {
        name: "part2",
        schedule,
        graph: DirectedGraph::ring(n).expect("ring"),
        x0: DVector::from_fn(n, |i, _| lit(30.0 + 0.1 * (i + 1) as f64)),
    }
}

pub fn part2() -> Preset<f64> {
    part2_as()
}

/// Size limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub max_state: usize,
    pub max_agents: usize,
    pub max_input: usize,
    pub max_horizon: usize,
    /// Probability of each extra edge beyond the spanning cycle.
    pub edge_prob: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            max_state: 6,
            max_agents: 5,
            max_input: 2,
            max_horizon: 40,
            edge_prob: 0.3,
        }
    }
}

fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let l = uniform_matrix(rng, n, n);
    (&l * l.transpose()) / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// Random strongly connected digraph: a shuffled spanning cycle plus extra
/// edges with probability `edge_prob`.
pub fn random_strongly_connected<R: Rng>(rng: &mut R, n: usize, edge_prob: f64) -> DirectedGraph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|t| (order[t], order[(t + 1) % n])).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    DirectedGraph::new(n, edges).expect("nodes in range")
}

/// Random time-invariant instance with nonsingular `A`, SPD weights and a
/// jointly controllable input set, over a random strongly connected graph.
pub fn random_instance<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Preset<f64> {
    loop {
        let n = rng.gen_range(1..=spec.max_state);
        let agents = rng.gen_range(1..=spec.max_agents);
        let mut a = uniform_matrix(rng, n, n);
        let rho = spectral_radius(&a);
        if rho < 1e-3 {
            continue;
        }
        a *= rng.gen_range(0.6..1.3) / rho;
        if reciprocal_condition(&a) < 1e-6 {
            continue;
        }
        let b: Vec<DMatrix<f64>> = (0..agents)
            .map(|_| {
                let m = rng.gen_range(1..=spec.max_input.min(n));
                uniform_matrix(rng, n, m)
            })
            .collect();
        let r: Vec<DMatrix<f64>> = b.iter().map(|bi| random_spd(rng, bi.ncols())).collect();
        let q = random_spd(rng, n);
        let horizon = rng.gen_range((agents + n + 2).min(spec.max_horizon)..=spec.max_horizon);
        let Ok(schedule) = SystemSchedule::time_invariant(a, b, q, r, Some(horizon)) else {
            continue;
        };
        if schedule.controllability_window(0, 1e-6, n).is_none() {
            continue;
        }
        let graph = random_strongly_connected(rng, agents, spec.edge_prob);
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
        return Preset {
            name: "random",
            schedule,
            graph,
            x0,
        };
    }
}

pub fn by_name(name: &str) -> Option<Preset<f64>> {
    match name {
        "part1" => Some(part1()),
        "part2" => Some(part2()),
        _ => None,
    }
}
