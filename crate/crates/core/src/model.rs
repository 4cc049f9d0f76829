//! Time-varying multi-input plant `x_{k+1} = A_k x_k + Σ_i B_{k,i} u_{k,i}` with
//! quadratic cost weights, plus controllability and admissibility checks.

use std::borrow::Cow;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{
    block_diag, hstack, is_spd, reciprocal_condition, spd_inverse, spectral_norm, sym_eig_range,
    symmetrize,
};
use crate::scalar::{lit, to_f64, Real};

/// Reciprocal condition number below which `A_k` counts as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;
/// Relative eigenvalue floor for positive definiteness, `λ_min > tol · λ_max`.
pub const SPD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("schedule needs at least one agent")]
    NoAgents,
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    Dimension {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{what} table has {len} entries, horizon needs {needed}")]
    TableTooShort {
        what: String,
        len: usize,
        needed: usize,
    },
    #[error("step {k} (+{h}) is outside the horizon {horizon:?}")]
    OutOfHorizon {
        k: usize,
        h: usize,
        horizon: Option<usize>,
    },
    #[error("A_{k} is singular (reciprocal condition {rcond:e})")]
    SingularA { k: usize, rcond: f64 },
    #[error("{what} at step {k} is not symmetric positive definite")]
    NotSpd { what: String, k: usize },
    #[error("eta must be positive")]
    NonPositiveEta,
    #[error("operation needs a time-invariant schedule")]
    NotTimeInvariant,
    #[error("operation needs a finite horizon")]
    InfiniteHorizon,
}

/// A matrix held constant or tabulated per step.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSeq<T: Real> {
    Constant(DMatrix<T>),
    PerStep(Vec<DMatrix<T>>),
}

impl<T: Real> MatrixSeq<T> {
    pub fn at(&self, k: usize) -> &DMatrix<T> {
        match self {
            Self::Constant(m) => m,
            Self::PerStep(v) => &v[k],
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    fn check(&self, what: &str, shape: (usize, usize), needed: usize) -> Result<(), ModelError> {
        let check_one = |m: &DMatrix<T>| {
            if m.shape() != shape {
                Err(ModelError::Dimension {
                    what: what.to_string(),
                    expected: shape,
                    found: m.shape(),
                })
            } else {
                Ok(())
            }
        };
        match self {
            Self::Constant(m) => check_one(m),
            Self::PerStep(v) => {
                if v.len() < needed {
                    return Err(ModelError::TableTooShort {
                        what: what.to_string(),
                        len: v.len(),
                        needed,
                    });
                }
                v.iter().try_for_each(check_one)
            }
        }
    }
}

/// Per-agent input matrices `B_{k,i}`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSchedule<T: Real> {
    /// One sequence per agent.
    PerAgent(Vec<MatrixSeq<T>>),
    /// Agent `i` (zero-based, `p = i + 1`) drives coordinate `i` of an
    /// `n`-dimensional state with gain `offset ± cos(p·k)` / `offset ± sin(p·k)`,
    /// cycling through `+cos, +sin, const, −cos, −sin` as `p mod 5` runs `1..5`.
    TrigColumns { n: usize, offset: f64 },
}

impl<T: Real> InputSchedule<T> {
    fn n_agents(&self) -> usize {
        match self {
            Self::PerAgent(v) => v.len(),
            Self::TrigColumns { n, .. } => *n,
        }
    }

    fn input_dim(&self, i: usize) -> usize {
        match self {
            Self::PerAgent(v) => v[i].at(0).ncols(),
            Self::TrigColumns { .. } => 1,
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Self::PerAgent(v) => v.iter().all(MatrixSeq::is_constant),
            Self::TrigColumns { .. } => false,
        }
    }

    fn at(&self, k: usize, i: usize) -> Cow<'_, DMatrix<T>> {
        match self {
            Self::PerAgent(v) => Cow::Borrowed(v[i].at(k)),
            Self::TrigColumns { n, offset } => {
                let p = (i + 1) as f64;
                let arg = p * k as f64;
                let gain = match (i + 1) % 5 {
                    1 => offset + arg.cos(),
                    2 => offset + arg.sin(),
                    3 => *offset,
                    4 => offset - arg.cos(),
                    _ => offset - arg.sin(),
                };
                let mut col = DMatrix::zeros(*n, 1);
                col[(i, 0)] = lit(gain);
                Cow::Owned(col)
            }
        }
    }
}

/// Plant matrices and cost weights over the horizon.
///
/// Index ranges: `A_k`, `B_{k,i}`, `R_{k,i}` for `k < M`; `Q_k` for `k ≤ M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSchedule<T: Real> {
    n: usize,
    input_dims: Vec<usize>,
    horizon: Option<usize>,
    a: MatrixSeq<T>,
    b: InputSchedule<T>,
    q: MatrixSeq<T>,
    r: Vec<MatrixSeq<T>>,
}

impl<T: Real> SystemSchedule<T> {
    /// Checks dimensional consistency; numeric admissibility is left to [`Self::validate`].
    pub fn new(
        a: MatrixSeq<T>,
        b: InputSchedule<T>,
        q: MatrixSeq<T>,
        r: Vec<MatrixSeq<T>>,
        horizon: Option<usize>,
    ) -> Result<Self, ModelError> {
        let n_agents = b.n_agents();
        if n_agents == 0 {
            return Err(ModelError::NoAgents);
        }
        let n = a.at(0).nrows();
        let steps = horizon.unwrap_or(1);
        let infinite_ok = |seq: &MatrixSeq<T>| horizon.is_some() || seq.is_constant();
        if !infinite_ok(&a) || !infinite_ok(&q) || (horizon.is_none() && !b.is_constant()) {
            return Err(ModelError::InfiniteHorizon);
        }
        a.check("A", (n, n), steps)?;
        q.check("Q", (n, n), steps + 1)?;
        if let InputSchedule::TrigColumns { n: dim, .. } = &b {
            if *dim != n {
                return Err(ModelError::Dimension {
                    what: "B".into(),
                    expected: (n, 1),
                    found: (*dim, 1),
                });
            }
        }
        if r.len() != n_agents {
            return Err(ModelError::Dimension {
                what: "R (agent count)".into(),
                expected: (n_agents, 1),
                found: (r.len(), 1),
            });
        }
        let mut input_dims = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let m = b.input_dim(i);
            if let InputSchedule::PerAgent(v) = &b {
                v[i].check(&format!("B[{i}]"), (n, m), steps)?;
            }
            if horizon.is_none() && !r[i].is_constant() {
                return Err(ModelError::InfiniteHorizon);
            }
            r[i].check(&format!("R[{i}]"), (m, m), steps)?;
            input_dims.push(m);
        }
        Ok(Self {
            n,
            input_dims,
            horizon,
            a,
            b,
            q,
            r,
        })
    }

    /// Time-invariant schedule from constant matrices.
    pub fn time_invariant(
        a: DMatrix<T>,
        b: Vec<DMatrix<T>>,
        q: DMatrix<T>,
        r: Vec<DMatrix<T>>,
        horizon: Option<usize>,
    ) -> Result<Self, ModelError> {
        Self::new(
            MatrixSeq::Constant(a),
            InputSchedule::PerAgent(b.into_iter().map(MatrixSeq::Constant).collect()),
            MatrixSeq::Constant(q),
            r.into_iter().map(MatrixSeq::Constant).collect(),
            horizon,
        )
    }

    /// Same matrices over a different horizon.
    pub fn with_horizon(&self, horizon: Option<usize>) -> Result<Self, ModelError> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.q.clone(),
            self.r.clone(),
            horizon,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn n_agents(&self) -> usize {
        self.input_dims.len()
    }

    pub fn input_dim(&self, i: usize) -> usize {
        self.input_dims[i]
    }

    pub fn total_input_dim(&self) -> usize {
        self.input_dims.iter().sum()
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    /// Finite horizon `M`, or an error for infinite-horizon schedules.
    pub fn finite_horizon(&self) -> Result<usize, ModelError> {
        self.horizon.ok_or(ModelError::InfiniteHorizon)
    }

    pub fn is_time_invariant(&self) -> bool {
        self.a.is_constant()
            && self.b.is_constant()
            && self.q.is_constant()
            && self.r.iter().all(MatrixSeq::is_constant)
    }

    pub fn a(&self, k: usize) -> &DMatrix<T> {
        self.a.at(k)
    }

    pub fn b(&self, k: usize, i: usize) -> Cow<'_, DMatrix<T>> {
        self.b.at(k, i)
    }

    pub fn q(&self, k: usize) -> &DMatrix<T> {
        self.q.at(k)
    }

    pub fn r(&self, k: usize, i: usize) -> &DMatrix<T> {
        self.r[i].at(k)
    }

    /// `B_k = [B_{k,1}, …, B_{k,N}]`.
    pub fn stacked_b(&self, k: usize) -> DMatrix<T> {
        let blocks: Vec<_> = (0..self.n_agents())
            .map(|i| self.b(k, i).into_owned())
            .collect();
        hstack(&blocks)
    }

    /// `R_k = diag[R_{k,1}, …, R_{k,N}]`.
    pub fn block_r(&self, k: usize) -> DMatrix<T> {
        let blocks: Vec<_> = (0..self.n_agents()).map(|i| self.r(k, i).clone()).collect();
        block_diag(&blocks)
    }

    fn check_window(&self, k: usize, h: usize) -> Result<(), ModelError> {
        match self.horizon {
            Some(m) if k + h > m => Err(ModelError::OutOfHorizon {
                k,
                h,
                horizon: self.horizon,
            }),
            _ => Ok(()),
        }
    }

    /// `Φ_{k+h−1,k} = A_{k+h−1} ⋯ A_k`, identity for `h = 0`.
    pub fn transition_product(&self, k: usize, h: usize) -> Result<DMatrix<T>, ModelError> {
        self.check_window(k, h)?;
        let mut phi = DMatrix::identity(self.n, self.n);
        for t in k..k + h {
            phi = self.a(t) * phi;
        }
        Ok(phi)
    }

    /// Joint controllability Gramian over the window `[k, k + L − 1]`.
    pub fn joint_controllability_check(
        &self,
        k: usize,
        window: usize,
        eta: T,
    ) -> Result<ControllabilityReport<T>, ModelError> {
        if eta <= T::zero() {
            return Err(ModelError::NonPositiveEta);
        }
        self.check_window(k, window)?;
        let mut gramian = DMatrix::zeros(self.n, self.n);
        let mut phi = DMatrix::identity(self.n, self.n);
        for h in 0..window {
            let t = k + h;
            let b = self.stacked_b(t);
            let r_inv = spd_inverse(&self.block_r(t)).ok_or_else(|| ModelError::NotSpd {
                what: "R".into(),
                k: t,
            })?;
            let pb: DMatrix<T> = &phi * b;
            gramian += &pb * r_inv * pb.transpose();
            phi = self.a(t) * phi;
        }
        let gramian = symmetrize(&gramian);
        let (lambda_min, _) = sym_eig_range(&gramian);
        Ok(ControllabilityReport {
            satisfied: lambda_min >= eta,
            lambda_min,
            gramian,
        })
    }

    /// Smallest window `L ≤ max_window` whose Gramian at `k` clears `eta`.
    pub fn controllability_window(&self, k: usize, eta: T, max_window: usize) -> Option<usize> {
        (1..=max_window).find(|&l| {
            self.joint_controllability_check(k, l, eta)
                .map(|r| r.satisfied)
                .unwrap_or(false)
        })
    }

    /// Numeric admissibility over the horizon: nonsingular `A_k`, SPD weights,
    /// and the empirical bound constants.
    pub fn validate(&self) -> Result<ScheduleReport, ModelError> {
        let steps = if self.is_time_invariant() {
            1
        } else {
            self.finite_horizon()?
        };
        let mut rep = ScheduleReport {
            a_norm_min: f64::INFINITY,
            a_norm_max: 0.0,
            b_norm_max: 0.0,
            q_eig_min: f64::INFINITY,
            q_eig_max: 0.0,
            r_eig_min: f64::INFINITY,
            r_eig_max: 0.0,
        };
        let spd_tol = lit::<T>(SPD_REL_TOL);
        for k in 0..steps {
            let a = self.a(k);
            let rcond = to_f64(reciprocal_condition(a));
            if !(rcond >= SINGULAR_RCOND) {
                return Err(ModelError::SingularA { k, rcond });
            }
            let na = to_f64(spectral_norm(a));
            rep.a_norm_min = rep.a_norm_min.min(na);
            rep.a_norm_max = rep.a_norm_max.max(na);
            for i in 0..self.n_agents() {
                rep.b_norm_max = rep.b_norm_max.max(to_f64(spectral_norm(&self.b(k, i))));
                let r = self.r(k, i);
                if !is_spd(r, spd_tol) {
                    return Err(ModelError::NotSpd {
                        what: format!("R[{i}]"),
                        k,
                    });
                }
                let (lo, hi) = sym_eig_range(r);
                rep.r_eig_min = rep.r_eig_min.min(to_f64(lo));
                rep.r_eig_max = rep.r_eig_max.max(to_f64(hi));
            }
        }
        let q_steps = if self.is_time_invariant() {
            1
        } else {
            steps + 1
        };
        for k in 0..q_steps {
            let q = self.q(k);
            if !is_spd(q, spd_tol) {
                return Err(ModelError::NotSpd {
                    what: "Q".into(),
                    k,
                });
            }
            let (lo, hi) = sym_eig_range(q);
            rep.q_eig_min = rep.q_eig_min.min(to_f64(lo));
            rep.q_eig_max = rep.q_eig_max.max(to_f64(hi));
        }
        Ok(rep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport<T: Real> {
    pub gramian: DMatrix<T>,
    pub lambda_min: T,
    pub satisfied: bool,
}

/// Empirical bound constants over the horizon.
///
/// `q_eig_*` and `r_eig_*` are eigenvalue extremes; for the lower constants these
/// are the quantities the boundedness argument actually needs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ScheduleReport {
    pub a_norm_min: f64,
    pub a_norm_max: f64,
    pub b_norm_max: f64,
    pub q_eig_min: f64,
    pub q_eig_max: f64,
    pub r_eig_min: f64,
    pub r_eig_max: f64,
}
