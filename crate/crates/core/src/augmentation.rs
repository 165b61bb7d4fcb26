//! Lifts `x_{t+1} = A x_t + B u_t + w_t` onto the truncated history `η_t`,
//! giving the time-varying system `η_{t+1} = Ã_t η_t + B̃_t u_t + C̃_t w_t`.

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, Matrix, Vector};

#[derive(Clone, Debug)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub horizon: usize,
    pub x0: Vector,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix, horizon: usize, x0: Vector) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dims("A", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dims("B rows", n, b.nrows()));
        }
        if x0.len() != n {
            return Err(Error::dims("x0", n, x0.len()));
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("x0: non-finite entry".into()));
        }
        Ok(Self { a, b, horizon, x0 })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// One step of the original dynamics.
    pub fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Vector {
        &self.a * x + &self.b * u + w
    }
}

/// `η₀ = x₀`; the history at stage 0 holds a single state whatever `k` is.
pub fn initial_eta(plant: &PlantModel) -> Vector {
    plant.x0.clone()
}

#[derive(Clone, Debug)]
pub struct StageMatrices {
    pub a_tilde: Matrix,
    pub b_tilde: Matrix,
    pub c_tilde: Matrix,
}

#[derive(Clone, Debug)]
pub struct AugmentedSystem {
    n: usize,
    m: usize,
    k: usize,
    stages: Vec<StageMatrices>,
    dims: Vec<usize>,
}

impl AugmentedSystem {
    pub fn build(plant: &PlantModel, k: usize) -> Result<Self> {
        let (n, m, horizon) = (plant.n(), plant.m(), plant.horizon);
        if k > horizon {
            return Err(Error::InvalidInput(format!(
                "coupling length {k} exceeds horizon {horizon}"
            )));
        }
        let dims: Vec<usize> = (0..=horizon).map(|t| n * (k.min(t) + 1)).collect();
        let stages = (0..horizon)
            .map(|t| {
                let (rows, cols) = (dims[t + 1], dims[t]);
                let mut a_tilde = Matrix::zeros(rows, cols);
                a_tilde.view_mut((0, 0), (n, n)).copy_from(&plant.a);
                // shift: the next history keeps all but (when full) the oldest state
                let kept = (rows - n).min(cols);
                for i in 0..kept {
                    a_tilde[(n + i, i)] = 1.0;
                }
                let mut b_tilde = Matrix::zeros(rows, m);
                b_tilde.view_mut((0, 0), (n, m)).copy_from(&plant.b);
                let mut c_tilde = Matrix::zeros(rows, n);
                c_tilde.view_mut((0, 0), (n, n)).fill_with_identity();
                StageMatrices {
                    a_tilde,
                    b_tilde,
                    c_tilde,
                }
            })
            .collect();
        Ok(Self {
            n,
            m,
            k,
            stages,
            dims,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    /// `n_t` for `t ∈ 0..=N`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, t: usize) -> usize {
        self.dims[t]
    }

    pub fn stage(&self, t: usize) -> &StageMatrices {
        &self.stages[t]
    }

    /// `η_{t+1} = Ã_t η + B̃_t u + C̃_t w`.
    pub fn step(&self, t: usize, eta: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        if t >= self.horizon() {
            return Err(Error::InvalidInput(format!(
                "stage {t} outside horizon {}",
                self.horizon()
            )));
        }
        if eta.len() != self.dims[t] {
            return Err(Error::dims(format!("history at stage {t}"), self.dims[t], eta.len()));
        }
        if u.len() != self.m {
            return Err(Error::dims("control", self.m, u.len()));
        }
        if w.len() != self.n {
            return Err(Error::dims("disturbance", self.n, w.len()));
        }
        Ok(self.step_unchecked(t, eta, u, w))
    }

    /// Same as [`step`](Self::step) using the known block structure; shapes
    /// must already be valid.
    pub(crate) fn step_unchecked(&self, t: usize, eta: &Vector, u: &Vector, w: &Vector) -> Vector {
        let n = self.n;
        let rows = self.dims[t + 1];
        let mut next = Vector::zeros(rows);
        let x = eta.rows(0, n);
        let stage = &self.stages[t];
        let a = stage.a_tilde.view((0, 0), (n, n));
        let b = stage.b_tilde.view((0, 0), (n, self.m));
        let head = a * x + b * u + w;
        next.rows_mut(0, n).copy_from(&head);
        let kept = (rows - n).min(eta.len());
        next.rows_mut(n, kept).copy_from(&eta.rows(0, kept));
        next
    }
}
