//! Step-by-step optimization of the fusion weights during the backward pass.
//!
//! At every step each agent picks its row `ω_{i·,k}` in the box
//! `[ε/d_j^out, 1/d_j^out]` to minimize `‖P_{k,i}‖₂` (at `k = 1`,
//! `‖A_0ᵀP_{1,i}A_0‖₂`), given the `P̄_{k,j}` its neighbors just sent.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::{DirectedGraph, FusionWeights};
use crate::linalg::{lambda_max, lambda_min, spd_inverse, symmetrize};
use crate::model::SystemSchedule;
use crate::recursion::{
    check_pair, design_segment, FusionContext, RecursionError, RecursionTables,
};
use crate::scalar::{lit, to_f64, Real};

/// Lower end of each coordinate is `LOWER_FRACTION / d_j^out`.
pub const LOWER_FRACTION: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const MAX_SWEEPS: usize = 50;
const GOLDEN_ITERS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightsError {
    #[error(transparent)]
    Recursion(#[from] RecursionError),
}

/// Time-varying fusion weights `ω_{ij,k}` for `k = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule<T: Real> {
    omega: Vec<DMatrix<T>>,
}

impl<T: Real> WeightSchedule<T> {
    /// Weights recorded in a finished design over `[0, M]`.
    pub fn from_tables(tables: &RecursionTables<T>) -> Self {
        Self {
            omega: (tables.start() + 1..=tables.end())
                .map(|k| tables.omega(k).clone())
                .collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.omega.len()
    }

    /// `ω_{·,k}` for `k ≥ 1`.
    pub fn at(&self, k: usize) -> &DMatrix<T> {
        &self.omega[k - 1]
    }
}

impl<T: Real> FusionWeights<T> for WeightSchedule<T> {
    fn weight(&self, k: usize, i: usize, j: usize) -> T {
        self.omega[k - 1][(i, j)]
    }
}

#[derive(Debug, Clone)]
pub struct OptimizedDesign<T: Real> {
    pub schedule: WeightSchedule<T>,
    pub tables: RecursionTables<T>,
    /// `objective[k − 1][i]`: achieved per-step objective of agent `i`.
    pub objective: Vec<Vec<f64>>,
    /// Same objective at the default weights `1/d_j^out`.
    pub default_objective: Vec<Vec<f64>>,
    /// Some row hit the sweep limit before the improvement dropped below `tol`.
    pub stagnated: bool,
}

/// Per-step objective for the weighted sum `Σ_j ω_j P̄_j⁻¹`.
fn row_objective<T: Real>(ctx: &FusionContext<'_, T>, w: &[T]) -> T {
    let n = ctx.p_bar_invs[0].nrows();
    let mut acc = DMatrix::zeros(n, n);
    for (m, &wj) in ctx.p_bar_invs.iter().zip(w) {
        acc += *m * wj;
    }
    let acc = symmetrize(&acc);
    if ctx.k == 1 {
        match spd_inverse(&acc) {
            Some(p) => lambda_max(&symmetrize(&(ctx.a_prev.transpose() * p * ctx.a_prev))),
            None => T::max_value().unwrap_or_else(T::one),
        }
    } else {
        let l = lambda_min(&acc);
        if l > T::zero() {
            T::one() / l
        } else {
            T::max_value().unwrap_or_else(T::one)
        }
    }
}

/// Golden-section search for the minimum of `f` on `[lo, hi]`, returning the
/// best of the interior estimate and both endpoints.
fn line_search<T: Real>(mut f: impl FnMut(T) -> T, lo: T, hi: T) -> (T, T) {
    let phi = lit::<T>(0.5 * (5f64.sqrt() - 1.0));
    let (mut a, mut b) = (lo, hi);
    let mut c = b - (b - a) * phi;
    let mut d = a + (b - a) * phi;
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * phi;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * phi;
            fd = f(d);
        }
    }
    let mut best = if fc < fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx <= best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Projected coordinate search from the upper corner. Returns the row, its
/// objective and whether the sweep limit was reached.
fn optimize_row<T: Real>(
    ctx: &FusionContext<'_, T>,
    lo: &[T],
    hi: &[T],
    tol: T,
) -> (Vec<T>, T, bool) {
    let mut w = hi.to_vec();
    let mut best = row_objective(ctx, &w);
    for _ in 0..MAX_SWEEPS {
        let start = best;
        for c in 0..w.len() {
            let mut trial = w.clone();
            let (x, fx) = line_search(
                |v| {
                    trial[c] = v;
                    row_objective(ctx, &trial)
                },
                lo[c],
                hi[c],
            );
            if fx < best {
                w[c] = x;
                best = fx;
            }
        }
        if start - best <= tol * start.abs().max(T::one()) {
            return (w, best, false);
        }
    }
    (w, best, true)
}

/// Backward design with per-step optimized weights.
pub fn optimize_weights<T: Real>(
    s: &SystemSchedule<T>,
    g: &DirectedGraph,
    tol: T,
) -> Result<OptimizedDesign<T>, WeightsError> {
    let m = s.finite_horizon().map_err(RecursionError::from)?;
    check_pair(s, g)?;
    let agents = s.n_agents();
    let n = lit::<T>(agents as f64);
    let mut objective = vec![vec![f64::NAN; agents]; m];
    let mut default_objective = vec![vec![f64::NAN; agents]; m];
    let mut stagnated = false;
    let terminal = vec![s.q(m) * n; agents];
    let tables = design_segment(s, g, 0, m, terminal, |ctx| {
        let hi: Vec<T> = ctx
            .neighbors
            .iter()
            .map(|&j| T::one() / lit::<T>(g.out_degree(j) as f64))
            .collect();
        let lo: Vec<T> = hi.iter().map(|&h| h * lit(LOWER_FRACTION)).collect();
        let (w, best, stuck) = optimize_row(ctx, &lo, &hi, tol);
        stagnated |= stuck;
        objective[ctx.k - 1][ctx.agent] = to_f64(best);
        default_objective[ctx.k - 1][ctx.agent] = to_f64(row_objective(ctx, &hi));
        Ok(w)
    })?;
    Ok(OptimizedDesign {
        schedule: WeightSchedule::from_tables(&tables),
        tables,
        objective,
        default_objective,
        stagnated,
    })
}
