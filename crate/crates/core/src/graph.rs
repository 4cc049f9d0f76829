//! Directed communication graphs with mandatory self-loops and fusion weights.
//!
//! An edge `(i, j)` means agent `i` receives information from agent `j`, so the
//! adjacency entry `a_ij` is one exactly when `(i, j)` is an edge. Nodes are
//! indexed from zero.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::scalar::{lit, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("adjacency matrix must be {expected}x{expected}")]
    AdjacencyShape { expected: usize },
    #[error("adjacency entry ({0}, {1}) must be 0 or 1, found {2}")]
    AdjacencyEntry(usize, usize, u8),
    #[error("adjacency disagrees with edge set at ({0}, {1})")]
    AdjacencyMismatch(usize, usize),
    #[error("weight matrix must be {expected}x{expected}")]
    WeightShape { expected: usize },
    #[error("weight ω[{i}][{j}] = {value} outside the admissible range (0, {upper}]")]
    WeightOutOfRange {
        i: usize,
        j: usize,
        value: f64,
        upper: f64,
    },
    #[error("weight ω[{i}][{j}] = {value} set on a non-edge")]
    WeightOffGraph { i: usize, j: usize, value: f64 },
}

/// Directed graph on `n` nodes with every self-loop present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<bool>,
}

impl DirectedGraph {
    /// Builds a graph from receive-edges `(i, j)`; self-loops are added.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut set: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::NodeOutOfRange(i, j, n));
            }
            set.insert((i, j));
        }
        let mut adjacency = vec![false; n * n];
        for &(i, j) in &set {
            adjacency[i * n + j] = true;
        }
        Ok(Self {
            n,
            edges: set,
            adjacency,
        })
    }

    /// Builds a graph from a 0/1 adjacency matrix (`rows[i][j] = a_ij`).
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut edges = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::AdjacencyShape { expected: n });
            }
            for (j, &a) in row.iter().enumerate() {
                match a {
                    0 => {}
                    1 => edges.push((i, j)),
                    other => return Err(GraphError::AdjacencyEntry(i, j, other)),
                }
            }
        }
        Self::new(n, edges)
    }

    /// Builds a graph from both an edge list and an adjacency matrix, rejecting
    /// any disagreement between the two (after self-loop insertion).
    pub fn from_parts(
        edges: impl IntoIterator<Item = (usize, usize)>,
        rows: &[Vec<u8>],
    ) -> Result<Self, GraphError> {
        let from_adj = Self::from_adjacency(rows)?;
        let from_edges = Self::new(rows.len(), edges)?;
        for i in 0..from_adj.n {
            for j in 0..from_adj.n {
                if from_adj.has_edge(i, j) != from_edges.has_edge(i, j) {
                    return Err(GraphError::AdjacencyMismatch(i, j));
                }
            }
        }
        Ok(from_edges)
    }

    /// Directed ring in which agent `i` receives from agent `i + 1 (mod n)`.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Agent `i` receives from both `i − 1` and `i + 1` (mod `n`).
    pub fn bidirectional_ring(n: usize) -> Result<Self, GraphError> {
        Self::new(
            n,
            (0..n).flat_map(|i| [(i, (i + 1) % n), (i, (i + n - 1) % n)]),
        )
    }

    /// Every agent receives from every agent.
    pub fn complete(n: usize) -> Result<Self, GraphError> {
        Self::new(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j))))
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// All edges including self-loops.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.adjacency[i * self.n + j]
    }

    /// Number of edges that are not self-loops; one message travels over each per round.
    pub fn edge_count_without_self_loops(&self) -> usize {
        self.edges.iter().filter(|(i, j)| i != j).count()
    }

    /// `N_i = { j : a_ij = 1 }`, including `i` itself.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// Nodes that receive from `j`, including `j` itself.
    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn out_degree(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.has_edge(i, j)).count()
    }

    /// `a_ij` as a 0/1 matrix.
    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.has_edge(i, j) as u8).collect())
            .collect()
    }

    /// Graph with every edge direction flipped.
    pub fn reverse(&self) -> Self {
        Self::new(self.n, self.edges.iter().map(|&(i, j)| (j, i)))
            .expect("reversal of a valid graph is valid")
    }

    /// True iff every node reaches every other node along directed edges.
    ///
    /// A forward and a backward breadth-first search from node 0 both have to
    /// cover the whole node set.
    pub fn is_strongly_connected(&self) -> bool {
        let reach = |forward: bool| {
            let mut seen = vec![false; self.n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..self.n {
                    // information flows j -> i along edge (i, j)
                    let linked = if forward {
                        self.has_edge(v, u)
                    } else {
                        self.has_edge(u, v)
                    };
                    if linked && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Entries of the `l`-th power of the adjacency matrix, saturating at `u64::MAX`.
    pub fn adjacency_power(&self, l: usize) -> Vec<Vec<u64>> {
        let n = self.n;
        let base: Vec<Vec<u64>> = (0..n)
            .map(|i| (0..n).map(|j| self.has_edge(i, j) as u64).collect())
            .collect();
        let mut acc: Vec<Vec<u64>> = (0..n)
            .map(|i| (0..n).map(|j| (i == j) as u64).collect())
            .collect();
        for _ in 0..l {
            let mut next = vec![vec![0u64; n]; n];
            for i in 0..n {
                for k in 0..n {
                    if acc[i][k] == 0 {
                        continue;
                    }
                    for j in 0..n {
                        if base[k][j] != 0 {
                            next[i][j] = next[i][j].saturating_add(acc[i][k]);
                        }
                    }
                }
            }
            acc = next;
        }
        acc
    }

    /// True iff every entry of the `l`-th adjacency power is positive.
    pub fn adjacency_power_all_positive(&self, l: usize) -> bool {
        self.adjacency_power(l)
            .iter()
            .all(|row| row.iter().all(|&v| v > 0))
    }
}

/// Source of the fusion gains `ω_ij` consumed when agent `i` forms `P_{k,i}`.
///
/// Constant weights ignore `k`; optimized schedules vary per step.
pub trait FusionWeights<T> {
    fn weight(&self, k: usize, i: usize, j: usize) -> T;
}

/// Constant fusion weights `ω_ij`, nonzero exactly on edges.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix<T: Real> {
    omega: DMatrix<T>,
}

impl<T: Real> WeightMatrix<T> {
    /// `ω_ij = 1 / d_j^out` on every edge.
    pub fn default_for(g: &DirectedGraph) -> Self {
        let n = g.n_nodes();
        let mut omega = DMatrix::zeros(n, n);
        for (i, j) in g.edges() {
            omega[(i, j)] = T::one() / lit::<T>(g.out_degree(j) as f64);
        }
        Self { omega }
    }

    /// Validates user-supplied weights against the graph.
    pub fn from_matrix(g: &DirectedGraph, omega: DMatrix<T>) -> Result<Self, GraphError> {
        let n = g.n_nodes();
        if omega.shape() != (n, n) {
            return Err(GraphError::WeightShape { expected: n });
        }
        for i in 0..n {
            for j in 0..n {
                let w = omega[(i, j)];
                if g.has_edge(i, j) {
                    check_weight(g, i, j, w)?;
                } else if w != T::zero() {
                    return Err(GraphError::WeightOffGraph {
                        i,
                        j,
                        value: crate::scalar::to_f64(w),
                    });
                }
            }
        }
        Ok(Self { omega })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.omega
    }

    /// `max_ij ω_ij`.
    pub fn max_weight(&self) -> T {
        self.omega.iter().fold(T::zero(), |acc, &w| acc.max(w))
    }
}

impl<T: Real> FusionWeights<T> for WeightMatrix<T> {
    fn weight(&self, _k: usize, i: usize, j: usize) -> T {
        self.omega[(i, j)]
    }
}

/// Checks `ω_ij ∈ (0, 1/d_j^out]` for an edge `(i, j)`.
pub(crate) fn check_weight<T: Real>(
    g: &DirectedGraph,
    i: usize,
    j: usize,
    w: T,
) -> Result<(), GraphError> {
    let upper = 1.0 / g.out_degree(j) as f64;
    let value = crate::scalar::to_f64(w);
    if !(value > 0.0 && value <= upper * (1.0 + 1e-12)) {
        return Err(GraphError::WeightOutOfRange { i, j, value, upper });
    }
    Ok(())
}

/// `weights` in `g` as an explicit matrix for step `k`.
pub fn weights_at<T: Real, W: FusionWeights<T> + ?Sized>(
    g: &DirectedGraph,
    weights: &W,
    k: usize,
) -> DMatrix<T> {
    let n = g.n_nodes();
    let mut out = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        out[(i, j)] = weights.weight(k, i, j);
    }
    out
}
