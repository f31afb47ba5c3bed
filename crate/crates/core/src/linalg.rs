//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Complex, DMatrix};

use crate::{Error, Matrix, Result};

/// Condition number ceiling for symmetric positive-definite solves.
pub const MAX_CONDITION: f64 = 1e12;

/// Moduli of the (possibly complex) eigenvalues of a square matrix.
pub fn eigen_moduli(a: &Matrix) -> Vec<f64> {
    a.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Matrix) -> f64 {
    eigen_moduli(a).into_iter().fold(0.0, f64::max)
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_extremes(a: &Matrix) -> (f64, f64) {
    let eig = symmetrize(a).symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
///
/// Rejects matrices that are not positive definite or whose condition number
/// exceeds [`MAX_CONDITION`].
pub fn spd_inverse(a: &Matrix, what: &str) -> Result<Matrix> {
    let sym = symmetrize(a);
    let (lo, hi) = symmetric_extremes(&sym);
    if !lo.is_finite() || lo <= 0.0 || !hi.is_finite() || hi / lo > MAX_CONDITION {
        return Err(Error::Singular(format!(
            "{what} not well-conditioned positive definite (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    sym.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} Cholesky factorization failed")))
}

/// Numerical rank from singular values, relative to the largest one.
pub fn rank(a: &Matrix, rel_tol: f64) -> usize {
    let sv = a.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// PBH stabilizability test: `[A - λI, B]` has full row rank for every
/// eigenvalue with `|λ| >= 1`.
pub fn is_stabilizable(a: &Matrix, b: &Matrix) -> bool {
    let n = a.nrows();
    let d = b.ncols();
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut m = DMatrix::<Complex<f64>>::zeros(n, n + d);
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)] - if i == j { lambda.re } else { 0.0 };
                let im = if i == j { -lambda.im } else { 0.0 };
                m[(i, j)] = Complex::new(v, im);
            }
            for j in 0..d {
                m[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = m.singular_values();
        let top = sv.iter().copied().fold(0.0, f64::max);
        if sv.iter().filter(|&&s| s > 1e-9 * top.max(1.0)).count() < n {
            return false;
        }
    }
    true
}

/// Parse-free matrix constructor from row slices; panics on ragged rows.
pub fn from_rows(rows: &[&[f64]]) -> Matrix {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    Matrix::from_fn(nr, nc, |i, j| rows[i][j])
}
