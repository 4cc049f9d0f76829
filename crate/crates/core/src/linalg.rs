//! Dense helpers over `nalgebra` used by the recursions.

use nalgebra::{DMatrix, DVector};

use crate::scalar::{lit, Real};

/// `(X + Xᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Inverse of a symmetric positive-definite matrix through a Cholesky factor.
///
/// Returns `None` when the factorization fails.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let chol = symmetrize(m).cholesky()?;
    Some(symmetrize(&chol.inverse()))
}

/// Solves `M X = rhs` for SPD `M`.
pub fn spd_solve<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Option<DMatrix<T>> {
    let chol = symmetrize(m).cholesky()?;
    Some(chol.solve(rhs))
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn sym_eig_range<T: Real>(m: &DMatrix<T>) -> (T, T) {
    if m.nrows() == 0 {
        return (T::zero(), T::zero());
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let mut lo = eig[0];
    let mut hi = eig[0];
    for &v in eig.iter() {
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
    }
    (lo, hi)
}

pub fn lambda_min<T: Real>(m: &DMatrix<T>) -> T {
    sym_eig_range(m).0
}

pub fn lambda_max<T: Real>(m: &DMatrix<T>) -> T {
    sym_eig_range(m).1
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(T::zero(), |acc, &s| if s > acc { s } else { acc })
}

/// Reciprocal 2-norm condition number `σ_min / σ_max`; zero for the zero matrix.
pub fn reciprocal_condition<T: Real>(m: &DMatrix<T>) -> T {
    let sv = m.clone().singular_values();
    let mut lo = T::max_value().unwrap_or_else(T::one);
    let mut hi = T::zero();
    for &s in sv.iter() {
        if s < lo {
            lo = s;
        }
        if s > hi {
            hi = s;
        }
    }
    if hi == T::zero() {
        T::zero()
    } else {
        lo / hi
    }
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> T {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(T::zero(), |acc, z| {
            let modulus = (z.re * z.re + z.im * z.im).sqrt();
            if modulus > acc {
                modulus
            } else {
                acc
            }
        })
}

/// Symmetric with `λ_min > rel_tol · λ_max` and `λ_max > 0`.
pub fn is_spd<T: Real>(m: &DMatrix<T>, rel_tol: T) -> bool {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let asym = (m - m.transpose())
        .iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    if asym > lit::<T>(1e-8) * (T::one() + scale) {
        return false;
    }
    let (lo, hi) = sym_eig_range(m);
    hi > T::zero() && lo > rel_tol * hi
}

/// Horizontal concatenation `[M_1, …, M_N]`.
pub fn hstack<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Block-diagonal matrix `diag[M_1, …, M_N]`.
pub fn block_diag<T: Real>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of vectors.
pub fn vstack<T: Real>(parts: &[DVector<T>]) -> DVector<T> {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(len);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(p);
        r += p.len();
    }
    out
}

/// `xᵀ M x`.
pub fn quad_form<T: Real>(m: &DMatrix<T>, x: &DVector<T>) -> T {
    x.dot(&(m * x))
}

/// Entries of `a` and `b` agree to `rel` relative to the larger magnitude (plus one).
pub fn rel_close<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, rel: T) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    (a - b).iter().all(|d| d.abs() <= rel * (T::one() + scale))
}
