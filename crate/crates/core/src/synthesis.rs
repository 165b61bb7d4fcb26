//! Backward Riccati recursion for the risk-aware problem on the augmented
//! history system, producing `J_t(η) = ηᵀP_tη + q_tᵀη + r_t` and the affine
//! policy `u = K_t η + κ_t`.

use crate::augmentation::{AugmentedSystem, PlantModel};
use crate::coupling::{CouplingSpec, StagePenalty};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SpdFactor, Vector, DEFAULT_TOL};
use crate::noise::NoiseMoments;

#[derive(Clone, Debug)]
pub struct SynthesisProblem {
    pub plant: PlantModel,
    pub coupling: CouplingSpec,
    pub lambda: f64,
    pub r: Matrix,
    pub moments: NoiseMoments,
}

impl SynthesisProblem {
    pub fn new(
        plant: PlantModel,
        coupling: CouplingSpec,
        lambda: f64,
        r: Matrix,
        moments: NoiseMoments,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        if coupling.n() != plant.n() {
            return Err(Error::dims("coupling state dimension", plant.n(), coupling.n()));
        }
        if coupling.k() > plant.horizon {
            return Err(Error::InvalidInput(format!(
                "coupling length {} exceeds horizon {}",
                coupling.k(),
                plant.horizon
            )));
        }
        if r.shape() != (plant.m(), plant.m()) {
            return Err(Error::dims(
                "R",
                format!("{0}x{0}", plant.m()),
                format!("{}x{}", r.nrows(), r.ncols()),
            ));
        }
        linalg::ensure_symmetric(&r, DEFAULT_TOL, "R")?;
        if linalg::min_eigenvalue(&r, DEFAULT_TOL)? <= 0.0 {
            return Err(Error::InvalidInput("R must be positive definite".into()));
        }
        coupling.check_moments(&moments)?;
        Ok(Self {
            plant,
            coupling,
            lambda,
            r,
            moments,
        })
    }

    pub fn augmented_system(&self) -> Result<AugmentedSystem> {
        AugmentedSystem::build(&self.plant, self.coupling.k())
    }

    /// Stage penalties for `t ∈ 0..=N`.
    pub fn stage_penalties(&self) -> Result<Vec<StagePenalty>> {
        (0..=self.plant.horizon)
            .map(|t| self.coupling.stage_penalty(t, self.lambda, &self.moments))
            .collect()
    }

    /// Constant `c` with (risk objective) = (quadratic objective) + `c`:
    /// `λ (N ϑ - 4 x₀ᵀQ₀₀ΣQ₀₀x₀ - 4 γᵀQ₀₀x₀)`.
    pub fn objective_offset(&self) -> f64 {
        let m = &self.moments;
        let q00 = self.coupling.q00();
        let x0 = &self.plant.x0;
        let qx = q00 * x0;
        let n = self.plant.horizon as f64;
        self.lambda
            * (n * m.vartheta - 4.0 * qx.dot(&(&m.central_cov * &qx)) - 4.0 * m.gamma.dot(&qx))
    }
}

/// Free-function form of [`SynthesisProblem::objective_offset`].
pub fn objective_offset(problem: &SynthesisProblem) -> f64 {
    problem.objective_offset()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineStage {
    pub gain: Matrix,
    pub offset: Vector,
}

/// Affine history feedback `u_t = K_t η_t + κ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub stages: Vec<AffineStage>,
}

impl Controller {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn control(&self, t: usize, eta: &Vector) -> Vector {
        let s = &self.stages[t];
        &s.gain * eta + &s.offset
    }

    /// Checks stage count and gain shapes against a system.
    pub fn check_dims(&self, sys: &AugmentedSystem) -> Result<()> {
        if self.stages.len() != sys.horizon() {
            return Err(Error::dims("controller stages", sys.horizon(), self.stages.len()));
        }
        for (t, s) in self.stages.iter().enumerate() {
            if s.gain.shape() != (sys.m(), sys.dim(t)) {
                return Err(Error::dims(
                    format!("gain K_{t}"),
                    format!("{}x{}", sys.m(), sys.dim(t)),
                    format!("{}x{}", s.gain.nrows(), s.gain.ncols()),
                ));
            }
            if s.offset.len() != sys.m() {
                return Err(Error::dims(format!("offset kappa_{t}"), sys.m(), s.offset.len()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    /// `P_t`, `t ∈ 0..=N`.
    pub p: Vec<Matrix>,
    pub q: Vec<Vector>,
    pub r: Vec<f64>,
    /// `K_t`, `t ∈ 0..N`.
    pub gains: Vec<Matrix>,
    pub offsets: Vec<Vector>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// `J_t(η)`.
    pub fn value_at(&self, t: usize, eta: &Vector) -> Result<f64> {
        let p = &self.p[t];
        if eta.len() != p.nrows() {
            return Err(Error::dims(format!("history at stage {t}"), p.nrows(), eta.len()));
        }
        Ok(linalg::quad_form(p, eta) + self.q[t].dot(eta) + self.r[t])
    }

    pub fn controller(&self) -> Controller {
        Controller {
            stages: self
                .gains
                .iter()
                .zip(&self.offsets)
                .map(|(gain, offset)| AffineStage {
                    gain: gain.clone(),
                    offset: offset.clone(),
                })
                .collect(),
        }
    }
}

/// `J₀(x₀)`, the optimal value of the quadratic reformulation.
pub fn value(sol: &RiccatiSolution, x0: &Vector) -> Result<f64> {
    sol.value_at(0, x0)
}

/// Runs the backward recursion.
pub fn synthesize(problem: &SynthesisProblem) -> Result<(RiccatiSolution, Controller)> {
    let sys = problem.augmented_system()?;
    let penalties = problem.stage_penalties()?;
    let sol = synthesize_with(problem, &sys, &penalties)?;
    let controller = sol.controller();
    Ok((sol, controller))
}

pub fn synthesize_with(
    problem: &SynthesisProblem,
    sys: &AugmentedSystem,
    penalties: &[StagePenalty],
) -> Result<RiccatiSolution> {
    let horizon = problem.plant.horizon;
    let lambda = problem.lambda;
    let w_bar = &problem.moments.mean;
    let second_moment = &problem.moments.central_cov + w_bar * w_bar.transpose();

    let mut p = vec![Matrix::zeros(0, 0); horizon + 1];
    let mut q = vec![Vector::zeros(0); horizon + 1];
    let mut r = vec![0.0; horizon + 1];
    let mut gains = vec![Matrix::zeros(0, 0); horizon];
    let mut offsets = vec![Vector::zeros(0); horizon];

    p[horizon] = penalties[horizon].q_lambda_t.clone();
    q[horizon] = &penalties[horizon].zeta_t * lambda;
    r[horizon] = 0.0;

    for t in (0..horizon).rev() {
        let stage = sys.stage(t);
        let (a, b, c) = (&stage.a_tilde, &stage.b_tilde, &stage.c_tilde);
        let p_next = &p[t + 1];
        let q_next = &q[t + 1];

        let pb = p_next * b;
        let gram = linalg::symmetrize(&(b.transpose() * &pb + &problem.r))?;
        let factor = SpdFactor::new(&gram).map_err(|e| Error::Synthesis {
            stage: t,
            reason: e.to_string(),
        })?;
        let bpa = pb.transpose() * a;
        let gain = -factor.solve(&bpa)?;
        // q_{t+1} + 2 P_{t+1} C̃ w̄
        let drift = q_next + p_next * (c * w_bar) * 2.0;
        let offset = factor.solve_vec(&(b.transpose() * &drift))? * -0.5;

        let p_t = &penalties[t].q_lambda_t + a.transpose() * p_next * a + bpa.transpose() * &gain;
        let scale = linalg::max_abs(&p_t).max(1.0);
        let asym = linalg::asymmetry(&p_t);
        if asym > DEFAULT_TOL * scale {
            return Err(Error::Synthesis {
                stage: t,
                reason: format!("P_t asymmetry {asym:e} before symmetrization"),
            });
        }
        let p_t = linalg::symmetrize(&p_t)?;
        if !linalg::is_psd(&p_t, DEFAULT_TOL)? {
            return Err(Error::Synthesis {
                stage: t,
                reason: "P_t lost positive semidefiniteness".into(),
            });
        }

        let closed_loop = a + b * &gain;
        let q_t = &penalties[t].zeta_t * lambda + closed_loop.transpose() * &drift;
        let ctpc = c.transpose() * p_next * c;
        let r_t = r[t + 1] + (&second_moment * ctpc).trace() + q_next.dot(&(c * w_bar))
            - linalg::quad_form(&gram, &offset);

        p[t] = p_t;
        q[t] = q_t;
        r[t] = r_t;
        gains[t] = gain;
        offsets[t] = offset;
    }

    Ok(RiccatiSolution {
        p,
        q,
        r,
        gains,
        offsets,
    })
}

/// `c_t(η, u) + E[J_{t+1}(Ã_tη + B̃_tu + C̃_tw)]` in closed form.
pub fn q_function(
    problem: &SynthesisProblem,
    sol: &RiccatiSolution,
    sys: &AugmentedSystem,
    t: usize,
    eta: &Vector,
    u: &Vector,
) -> Result<f64> {
    if t >= sys.horizon() {
        return Err(Error::InvalidInput(format!("stage {t} outside horizon")));
    }
    if eta.len() != sys.dim(t) {
        return Err(Error::dims(format!("history at stage {t}"), sys.dim(t), eta.len()));
    }
    if u.len() != sys.m() {
        return Err(Error::dims("control", sys.m(), u.len()));
    }
    let penalty = problem.coupling.stage_penalty(t, problem.lambda, &problem.moments)?;
    let stage = sys.stage(t);
    let w_bar = &problem.moments.mean;
    let mean_next = &stage.a_tilde * eta + &stage.b_tilde * u + &stage.c_tilde * w_bar;
    let p_next = &sol.p[t + 1];
    let noise_term = (stage.c_tilde.transpose() * p_next * &stage.c_tilde * &problem.moments.central_cov).trace();
    Ok(penalty.state_cost(eta)
        + linalg::quad_form(&problem.r, u)
        + linalg::quad_form(p_next, &mean_next)
        + noise_term
        + sol.q[t + 1].dot(&mean_next)
        + sol.r[t + 1])
}
