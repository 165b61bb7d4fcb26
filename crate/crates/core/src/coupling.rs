//! Temporally coupled state costs.
//!
//! A coupling of length `k` is a symmetric PSD block matrix `𝒬` with
//! `(k+1)×(k+1)` blocks `Q_ij` of size `n×n`, acting on the newest-first
//! history `η_t = [x_t; x_{t-1}; …; x_{t-k_t}]` with `k_t = min(k, t)`.

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_symmetric, Matrix, Vector, DEFAULT_TOL};
use crate::noise::NoiseMoments;

/// How a coupling was specified; kept for reporting.
#[derive(Clone, Debug, PartialEq)]
pub enum CouplingKind {
    General,
    OneStep,
    Difference { beta: f64 },
}

#[derive(Clone, Debug)]
pub struct CouplingSpec {
    n: usize,
    k: usize,
    blocks: Vec<Vec<Matrix>>,
    assembled: Matrix,
    kind: CouplingKind,
}

impl CouplingSpec {
    /// Validates and stores a `(k+1)×(k+1)` grid of `n×n` blocks.
    pub fn build_general(n: usize, k: usize, blocks: Vec<Vec<Matrix>>) -> Result<Self> {
        Self::from_blocks(n, k, blocks, CouplingKind::General)
    }

    fn from_blocks(n: usize, k: usize, blocks: Vec<Vec<Matrix>>, kind: CouplingKind) -> Result<Self> {
        if blocks.len() != k + 1 {
            return Err(Error::dims("coupling block rows", k + 1, blocks.len()));
        }
        for (i, row) in blocks.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(Error::dims(format!("coupling block row {i}"), k + 1, row.len()));
            }
            for (j, b) in row.iter().enumerate() {
                if b.shape() != (n, n) {
                    return Err(Error::dims(
                        format!("coupling block Q{i}{j}"),
                        format!("{n}x{n}"),
                        format!("{}x{}", b.nrows(), b.ncols()),
                    ));
                }
            }
        }
        let dim = n * (k + 1);
        let mut assembled = Matrix::zeros(dim, dim);
        for (i, row) in blocks.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                assembled.view_mut((i * n, j * n), (n, n)).copy_from(b);
            }
        }
        ensure_symmetric(&assembled, DEFAULT_TOL, "coupling matrix")?;
        let min_eigenvalue = linalg::min_eigenvalue(&assembled, DEFAULT_TOL)?;
        if !linalg::is_psd(&assembled, DEFAULT_TOL)? {
            return Err(Error::InvalidCoupling { min_eigenvalue });
        }
        Ok(Self {
            n,
            k,
            blocks,
            assembled,
            kind,
        })
    }

    /// `xᵀ q x + (x - x_prev)ᵀ q_bar (x - x_prev)` as a `k = 1` coupling.
    pub fn build_one_step(q: &Matrix, q_bar: &Matrix) -> Result<Self> {
        ensure_symmetric(q, DEFAULT_TOL, "Q")?;
        ensure_symmetric(q_bar, DEFAULT_TOL, "Qbar")?;
        if q.shape() != q_bar.shape() {
            return Err(Error::dims(
                "Qbar",
                format!("{}x{}", q.nrows(), q.ncols()),
                format!("{}x{}", q_bar.nrows(), q_bar.ncols()),
            ));
        }
        for (name, m) in [("Q", q), ("Qbar", q_bar)] {
            if !linalg::is_psd(m, DEFAULT_TOL)? {
                return Err(Error::InvalidInput(format!("{name} is not positive semidefinite")));
            }
        }
        let blocks = vec![
            vec![q + q_bar, -q_bar],
            vec![-q_bar, q_bar.clone()],
        ];
        Self::from_blocks(q.nrows(), 1, blocks, CouplingKind::OneStep)
    }

    /// `xᵀ q x + β Σ_{i=1..k} (x_t - x_{t-i})ᵀ q (x_t - x_{t-i})`.
    pub fn build_difference_penalty(q: &Matrix, beta: f64, k: usize) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidInput(format!("beta must be >= 0, got {beta}")));
        }
        ensure_symmetric(q, DEFAULT_TOL, "Q")?;
        if !linalg::is_psd(q, DEFAULT_TOL)? {
            return Err(Error::InvalidInput("Q is not positive semidefinite".into()));
        }
        let n = q.nrows();
        let mut blocks = vec![vec![Matrix::zeros(n, n); k + 1]; k + 1];
        blocks[0][0] = q * (1.0 + beta * k as f64);
        for b in blocks[0].iter_mut().skip(1) {
            *b = q * -beta;
        }
        for (i, row) in blocks.iter_mut().enumerate().skip(1) {
            row[0] = q * -beta;
            row[i] = q * beta;
        }
        Self::from_blocks(n, k, blocks, CouplingKind::Difference { beta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> &CouplingKind {
        &self.kind
    }

    pub fn block(&self, i: usize, j: usize) -> &Matrix {
        &self.blocks[i][j]
    }

    pub fn q00(&self) -> &Matrix {
        &self.blocks[0][0]
    }

    pub fn assembled(&self) -> &Matrix {
        &self.assembled
    }

    /// `k_t = min(k, t)`.
    pub fn k_t(&self, t: usize) -> usize {
        self.k.min(t)
    }

    /// `n_t = n (k_t + 1)`.
    pub fn n_t(&self, t: usize) -> usize {
        self.n * (self.k_t(t) + 1)
    }

    /// Leading `n_t × n_t` principal submatrix `𝒬_t`.
    pub fn truncated(&self, t: usize) -> Matrix {
        let nt = self.n_t(t);
        self.assembled.view((0, 0), (nt, nt)).clone_owned()
    }

    /// First block row `[Q₀₀ Q₀₁ ⋯ Q₀ₖₜ]`, size `n × n_t`.
    pub fn first_block_row(&self, t: usize) -> Matrix {
        let nt = self.n_t(t);
        self.assembled.view((0, 0), (self.n, nt)).clone_owned()
    }

    /// `z_t = η_tᵀ 𝒬_t η_t`.
    pub fn sequential_energy(&self, eta: &Vector, t: usize) -> Result<f64> {
        let nt = self.n_t(t);
        if eta.len() != nt {
            return Err(Error::dims(format!("history at stage {t}"), nt, eta.len()));
        }
        let q = self.assembled.view((0, 0), (nt, nt));
        Ok(eta.dot(&(q * eta)))
    }

    /// Stage risk data `H_t`, `ζ_t` and the inflated penalty `𝒬_t + λH_t`.
    pub fn stage_penalty(&self, t: usize, lambda: f64, moments: &NoiseMoments) -> Result<StagePenalty> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        self.check_moments(moments)?;
        let first_row = self.first_block_row(t);
        let q_t = self.truncated(t);
        let h_t = linalg::symmetrize(&(first_row.transpose() * &moments.central_cov * &first_row * 4.0))?;
        let zeta_t = first_row.transpose() * &moments.gamma * 4.0;
        let q_lambda_t = &q_t + &h_t * lambda;
        Ok(StagePenalty {
            t,
            k_t: self.k_t(t),
            n_t: self.n_t(t),
            lambda,
            q_t,
            h_t,
            zeta_t,
            q_lambda_t,
            first_row,
        })
    }

    /// Errors unless `moments` were computed against this coupling's `Q₀₀`.
    pub fn check_moments(&self, moments: &NoiseMoments) -> Result<()> {
        let q00 = self.q00();
        if moments.q00_used.shape() != q00.shape() {
            return Err(Error::InvalidInput(
                "noise moments were computed for a different state dimension".into(),
            ));
        }
        let diff = (&moments.q00_used - q00).abs().max();
        if diff > 1e-12 * linalg::max_abs(q00).max(1.0) {
            return Err(Error::InvalidInput(
                "noise moments were computed for a different Q00".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the recursion and the estimators need about stage `t`.
#[derive(Clone, Debug)]
pub struct StagePenalty {
    pub t: usize,
    pub k_t: usize,
    pub n_t: usize,
    pub lambda: f64,
    pub q_t: Matrix,
    pub h_t: Matrix,
    pub zeta_t: Vector,
    pub q_lambda_t: Matrix,
    /// `[Q₀₀ ⋯ Q₀ₖₜ]`; `H_t = 4 Q̄ᵀ Σ Q̄`.
    pub first_row: Matrix,
}

impl StagePenalty {
    /// `c_t(η, ·)` without the control term: `ηᵀ𝒬_{λ,t}η + λζ_tᵀη`.
    pub fn state_cost(&self, eta: &Vector) -> f64 {
        linalg::quad_form(&self.q_lambda_t, eta) + self.lambda * self.zeta_t.dot(eta)
    }

    /// `η_tᵀH_tη_t + ζ_tᵀη_t`.
    pub fn risk_form(&self, eta: &Vector) -> f64 {
        linalg::quad_form(&self.h_t, eta) + self.zeta_t.dot(eta)
    }
}
