//! Small dense linear-algebra kernel shared by the other modules.
//!
//! Matrices are `nalgebra` dynamic matrices. Shapes are checked explicitly at
//! every public entry point; nothing here panics on caller-supplied shapes.
//! Symmetry and semidefiniteness tolerances are relative: a tolerance `tol`
//! is scaled by `max(1, max|m_ij|)` before use.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative tolerance for symmetry and PSD checks.
pub const DEFAULT_TOL: f64 = 1e-9;

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn scaled_tol(m: &Matrix, tol: f64) -> f64 {
    tol * max_abs(m).max(1.0)
}

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_square(m: &Matrix, context: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn ensure_finite(m: &Matrix, context: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{context}: non-finite entry")))
    }
}

pub fn ensure_symmetric(m: &Matrix, tol: f64, context: &str) -> Result<()> {
    ensure_square(m, context)?;
    ensure_finite(m, context)?;
    let asym = asymmetry(m);
    if asym > scaled_tol(m, tol) {
        return Err(Error::InvalidInput(format!(
            "{context}: matrix is not symmetric (max |m - mT| = {asym:e})"
        )));
    }
    Ok(())
}

/// Block-diagonal matrix `[[a, 0], [0, b]]`.
pub fn direct_sum(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Result<Matrix> {
    ensure_square(m, "symmetrize")?;
    Ok((m + m.transpose()) * 0.5)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Matrix, tol: f64) -> Result<Vec<f64>> {
    ensure_symmetric(m, tol, "symmetric_eigenvalues")?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let sym = symmetrize(m)?;
    let mut values: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

pub fn min_eigenvalue(m: &Matrix, tol: f64) -> Result<f64> {
    Ok(symmetric_eigenvalues(m, tol)?.first().copied().unwrap_or(0.0))
}

/// True iff the smallest eigenvalue is at least `-tol * max(1, max|m_ij|)`.
///
/// Errors when `m` is not square or not symmetric within the same tolerance.
pub fn is_psd(m: &Matrix, tol: f64) -> Result<bool> {
    let lo = min_eigenvalue(m, tol)?;
    Ok(lo >= -scaled_tol(m, tol))
}

/// Symmetric square root `V diag(sqrt(max(λ, 0))) Vᵀ`-style factor `L` with
/// `L Lᵀ = m` for PSD `m`. Works for singular covariances where Cholesky does not.
pub fn psd_factor(m: &Matrix) -> Result<Matrix> {
    ensure_symmetric(m, DEFAULT_TOL, "psd_factor")?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(m)?);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&roots))
}

/// Cholesky factor of a symmetric positive definite matrix, reusable for
/// several right-hand sides.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    dim: usize,
}

impl SpdFactor {
    pub fn new(m: &Matrix) -> Result<Self> {
        ensure_symmetric(m, DEFAULT_TOL, "solve_spd")?;
        let dim = m.nrows();
        let chol = Cholesky::new(symmetrize(m)?).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { chol, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix> {
        if rhs.nrows() != self.dim {
            return Err(Error::dims("solve_spd rhs rows", self.dim, rhs.nrows()));
        }
        Ok(self.chol.solve(rhs))
    }

    pub fn solve_vec(&self, rhs: &Vector) -> Result<Vector> {
        if rhs.len() != self.dim {
            return Err(Error::dims("solve_spd rhs length", self.dim, rhs.len()));
        }
        Ok(self.chol.solve(rhs))
    }
}

/// Solves `m x = rhs` for symmetric positive definite `m` via Cholesky.
pub fn solve_spd(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    SpdFactor::new(m)?.solve(rhs)
}

/// `vᵀ m v`.
#[inline]
pub fn quad_form(m: &Matrix, v: &Vector) -> f64 {
    debug_assert_eq!(m.ncols(), v.len());
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let col = m.column(j);
        let mut s = 0.0;
        for i in 0..m.nrows() {
            s += v[i] * col[i];
        }
        acc += s * vj;
    }
    acc
}

/// Builds a matrix from row-major nested rows, rejecting ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::config(
                format!("{path}[{i}]"),
                format!("row has length {}, expected {ncols}", row.len()),
            ));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("{path}[{i}][{j}]"), "non-finite entry"));
        }
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn vector_from_slice(values: &[f64], path: &str) -> Result<Vector> {
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::config(format!("{path}[{j}]"), "non-finite entry"));
    }
    Ok(Vector::from_column_slice(values))
}
