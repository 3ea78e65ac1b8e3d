//! Small dense symmetric-matrix helpers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

fn symmetry_gap(a: &Matrix) -> f64 {
    let scale = a.amax().max(1e-300);
    (a - a.transpose()).amax() / scale
}

/// Eigendecomposition of a symmetric positive definite matrix; rejects anything else.
pub fn spd_eigen(a: &Matrix, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::NotSpd {
            what: what.into(),
            detail: format!("shape {}×{}", a.nrows(), a.ncols()),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    let gap = symmetry_gap(a);
    if gap > 1e-10 {
        return Err(Error::NotSpd {
            what: what.into(),
            detail: format!("asymmetry {gap:.2e}"),
        });
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::NotSpd {
            what: what.into(),
            detail: format!("smallest eigenvalue {min:.3e}"),
        });
    }
    Ok(eig)
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn spectral_map(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> Matrix {
    let q = &eig.eigenvectors;
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(f));
    let m = q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn spd_inverse(a: &Matrix, what: &str) -> Result<Matrix> {
    Ok(spectral_map(&spd_eigen(a, what)?, |x| 1.0 / x))
}

pub fn spd_sqrt(a: &Matrix, what: &str) -> Result<Matrix> {
    Ok(spectral_map(&spd_eigen(a, what)?, f64::sqrt))
}

pub fn spd_inv_sqrt(a: &Matrix, what: &str) -> Result<Matrix> {
    Ok(spectral_map(&spd_eigen(a, what)?, |x| 1.0 / x.sqrt()))
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &Matrix) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Smallest eigenvalue of a symmetric matrix stored row-major in a slice.
pub fn min_eigenvalue_slice(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let mid = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            mid - rad
        }
        _ => min_eigenvalue(&Matrix::from_row_slice(n, n, a)),
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("matrix rows must form a non-empty square"));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect()).collect()
}
