//! Seeded closed-loop rollouts and Monte Carlo ensembles.
//!
//! Every trial draws its disturbances from its own ChaCha stream selected by
//! `(master_seed, trial_index)`, so results do not depend on how trials are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augmentation::AugmentedSystem;
use crate::coupling::{CouplingSpec, StagePenalty};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::noise::{NoiseModel, NoiseMoments};
use crate::synthesis::{Controller, SynthesisProblem};

/// Random stream for one trial.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

/// What each simulated trajectory keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Storage {
    #[default]
    Full,
    /// Drops histories and disturbances; keeps states, controls, energies and costs.
    Compact,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrialCost {
    /// `z_N + Σ (z_t + u_tᵀRu_t) + λ Σ Δ_t²`.
    pub problem1: f64,
    /// `c_N(η_N) + Σ c_t(η_t, u_t)`.
    pub problem2: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
    pub noises: Vec<Vector>,
    pub etas: Vec<Vector>,
    /// `z_0 … z_N`.
    pub z: Vec<f64>,
    /// `Δ_1 … Δ_N` (index `t - 1`).
    pub delta: Vec<f64>,
    pub cost: TrialCost,
    pub master_seed: u64,
    pub trial_index: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// `Δ_t` for `t ∈ 1..=N`.
    pub fn delta_at(&self, t: usize) -> f64 {
        self.delta[t - 1]
    }

    fn compact(mut self) -> Self {
        self.noises = Vec::new();
        self.etas = Vec::new();
        self
    }
}

/// Pieces of the realized prediction error `Δ_t = 2 s_t + y_t`, where
/// `s_t = Σ_{i=1..k_t} x_{t-i}ᵀQ_{i0}d_t` and
/// `y_t = d_tᵀQ₀₀d_t - tr(ΣQ₀₀) + 2 x̂_tᵀQ₀₀d_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaTerms {
    pub y: f64,
    pub coupled: f64,
    pub delta: f64,
    /// `y²`
    pub term1: f64,
    /// `4 s²`
    pub term2: f64,
    /// `4 s y`
    pub term3: f64,
}

fn delta_terms_raw(
    states: &[Vector],
    noise: &Vector,
    coupling: &CouplingSpec,
    moments: &NoiseMoments,
    t: usize,
) -> DeltaTerms {
    let d = noise - &moments.mean;
    let q00 = coupling.q00();
    // E[x_t | past] = A x_{t-1} + B u_{t-1} + w̄ = x_t - d_t
    let x_hat = &states[t] - &d;
    let q00_d = q00 * &d;
    let y = d.dot(&q00_d) - moments.trace_sigma_q00() + 2.0 * x_hat.dot(&q00_d);
    let mut coupled = 0.0;
    for i in 1..=coupling.k_t(t) {
        coupled += states[t - i].dot(&(coupling.block(i, 0) * &d));
    }
    DeltaTerms {
        y,
        coupled,
        delta: 2.0 * coupled + y,
        term1: y * y,
        term2: 4.0 * coupled * coupled,
        term3: 4.0 * coupled * y,
    }
}

/// Decomposition of `Δ_t` for a fully stored trajectory.
pub fn delta_terms(
    traj: &Trajectory,
    coupling: &CouplingSpec,
    moments: &NoiseMoments,
    t: usize,
) -> Result<DeltaTerms> {
    if t == 0 || t > traj.horizon() {
        return Err(Error::InvalidInput(format!(
            "prediction error is defined for stages 1..={}, got {t}",
            traj.horizon()
        )));
    }
    if traj.noises.len() != traj.horizon() {
        return Err(Error::InvalidInput(
            "trajectory was stored without its disturbances".into(),
        ));
    }
    if traj.states[0].len() != coupling.n() || moments.dim() != coupling.n() {
        return Err(Error::dims("state dimension", coupling.n(), traj.states[0].len()));
    }
    coupling.check_moments(moments)?;
    Ok(delta_terms_raw(&traj.states, &traj.noises[t - 1], coupling, moments, t))
}

/// Realized `Δ_t = z_t - E(z_t | past)`.
pub fn realize_delta(
    traj: &Trajectory,
    coupling: &CouplingSpec,
    moments: &NoiseMoments,
    t: usize,
) -> Result<f64> {
    delta_terms(traj, coupling, moments, t).map(|d| d.delta)
}

/// Per-realization integrands whose means should agree with the three
/// decomposition terms: `4(x_tᵀQ₀₀ΣQ₀₀x_t + x_tᵀQ₀₀γ) + ϑ`, `4vᵀΣv` and
/// `4vᵀ(γ + 2ΣQ₀₀x_t)` with `v = Σ_{i≥1} Q_{0i}x_{t-i}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermIntegrands {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
}

pub fn term_integrands(
    traj: &Trajectory,
    coupling: &CouplingSpec,
    moments: &NoiseMoments,
    t: usize,
) -> Result<TermIntegrands> {
    if t == 0 || t > traj.horizon() {
        return Err(Error::InvalidInput(format!(
            "prediction error is defined for stages 1..={}, got {t}",
            traj.horizon()
        )));
    }
    coupling.check_moments(moments)?;
    let q00 = coupling.q00();
    let sigma = &moments.central_cov;
    let x = &traj.states[t];
    let qx = q00 * x;
    let mut v = Vector::zeros(coupling.n());
    for i in 1..=coupling.k_t(t) {
        v += coupling.block(0, i) * &traj.states[t - i];
    }
    Ok(TermIntegrands {
        term1: 4.0 * (qx.dot(&(sigma * &qx)) + qx.dot(&moments.gamma)) + moments.vartheta,
        term2: 4.0 * v.dot(&(sigma * &v)),
        term3: 4.0 * v.dot(&(&moments.gamma + 2.0 * (sigma * &qx))),
    })
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub problem: SynthesisProblem,
    pub noise: NoiseModel,
    pub controller: Controller,
    pub n_trials: usize,
    pub master_seed: u64,
    pub storage: Storage,
}

/// Precomputed closed-loop simulator for one ensemble configuration.
#[derive(Clone, Debug)]
pub struct Simulator {
    cfg: EnsembleConfig,
    system: AugmentedSystem,
    penalties: Vec<StagePenalty>,
}

impl Simulator {
    pub fn new(cfg: EnsembleConfig) -> Result<Self> {
        if cfg.n_trials == 0 {
            return Err(Error::InvalidInput("ensemble needs at least one trial".into()));
        }
        let n = cfg.problem.plant.n();
        if cfg.noise.dim() != n {
            return Err(Error::dims("noise dimension", n, cfg.noise.dim()));
        }
        let system = cfg.problem.augmented_system()?;
        cfg.controller.check_dims(&system)?;
        let penalties = cfg.problem.stage_penalties()?;
        Ok(Self {
            cfg,
            system,
            penalties,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn system(&self) -> &AugmentedSystem {
        &self.system
    }

    pub fn penalties(&self) -> &[StagePenalty] {
        &self.penalties
    }

    /// Same dynamics and seeds, different controller.
    pub fn with_controller(&self, controller: Controller) -> Result<Self> {
        controller.check_dims(&self.system)?;
        let mut next = self.clone();
        next.cfg.controller = controller;
        Ok(next)
    }

    /// Full trajectory of one trial, regardless of the storage mode.
    pub fn simulate(&self, trial_index: u64) -> Trajectory {
        let mut rng = trial_rng(self.cfg.master_seed, trial_index);
        let noises = (0..self.cfg.problem.plant.horizon)
            .map(|_| self.cfg.noise.sample(&mut rng))
            .collect();
        let mut traj = self.rollout_unchecked(noises);
        traj.trial_index = trial_index;
        traj
    }

    /// Replays the closed loop on a given disturbance sequence.
    pub fn rollout(&self, noises: Vec<Vector>) -> Result<Trajectory> {
        let plant = &self.cfg.problem.plant;
        if noises.len() != plant.horizon {
            return Err(Error::dims("disturbance sequence length", plant.horizon, noises.len()));
        }
        if let Some(w) = noises.iter().find(|w| w.len() != plant.n()) {
            return Err(Error::dims("disturbance", plant.n(), w.len()));
        }
        Ok(self.rollout_unchecked(noises))
    }

    fn rollout_unchecked(&self, noises: Vec<Vector>) -> Trajectory {
        let problem = &self.cfg.problem;
        let plant = &problem.plant;
        let (n, horizon, lambda) = (plant.n(), plant.horizon, problem.lambda);

        let mut eta = plant.x0.clone();
        let mut states = Vec::with_capacity(horizon + 1);
        let mut etas = Vec::with_capacity(horizon + 1);
        let mut controls = Vec::with_capacity(horizon);
        let mut z = Vec::with_capacity(horizon + 1);
        let mut delta = Vec::with_capacity(horizon);
        let mut cost = TrialCost::default();
        states.push(plant.x0.clone());

        for (t, w) in noises.iter().enumerate() {
            let u = self.cfg.controller.control(t, &eta);
            let penalty = &self.penalties[t];
            let z_t = linalg::quad_form(&penalty.q_t, &eta);
            let effort = linalg::quad_form(&problem.r, &u);
            cost.problem1 += z_t + effort;
            cost.problem2 += penalty.state_cost(&eta) + effort;
            z.push(z_t);

            let next = self.system.step_unchecked(t, &eta, &u, w);
            states.push(next.rows(0, n).clone_owned());
            let terms = delta_terms_raw(&states, w, &problem.coupling, &problem.moments, t + 1);
            cost.problem1 += lambda * terms.delta * terms.delta;
            delta.push(terms.delta);

            controls.push(u);
            etas.push(std::mem::replace(&mut eta, next));
        }
        let last = &self.penalties[horizon];
        let z_n = linalg::quad_form(&last.q_t, &eta);
        z.push(z_n);
        cost.problem1 += z_n;
        cost.problem2 += last.state_cost(&eta);
        etas.push(eta);

        Trajectory {
            states,
            controls,
            noises,
            etas,
            z,
            delta,
            cost,
            master_seed: self.cfg.master_seed,
            trial_index: 0,
        }
    }

    fn simulate_stored(&self, trial_index: u64) -> Trajectory {
        let traj = self.simulate(trial_index);
        match self.cfg.storage {
            Storage::Full => traj,
            Storage::Compact => traj.compact(),
        }
    }

    /// Runs every trial in parallel; output order is trial order.
    pub fn run_ensemble(&self) -> TrajectoryEnsemble {
        let trajectories = (0..self.cfg.n_trials as u64)
            .into_par_iter()
            .map(|i| self.simulate_stored(i))
            .collect();
        TrajectoryEnsemble {
            trajectories,
            master_seed: self.cfg.master_seed,
            lambda: self.cfg.problem.lambda,
        }
    }

    /// Streams trials through `f` without keeping trajectories; results are
    /// in trial order.
    pub fn map_trials<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Trajectory) -> T + Sync + Send,
    {
        (0..self.cfg.n_trials as u64)
            .into_par_iter()
            .map(|i| f(self.simulate(i)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryEnsemble {
    pub trajectories: Vec<Trajectory>,
    pub master_seed: u64,
    pub lambda: f64,
}

impl TrajectoryEnsemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    /// Order-dependent but deterministic: sums in slice order with
    /// Neumaier compensation.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = compensated_sum(samples.iter().copied()) / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let ss = compensated_sum(samples.iter().map(|v| (v - mean) * (v - mean)));
            (ss / (n as f64 - 1.0) / n as f64).sqrt()
        };
        Self { mean, std_error, n }
    }

    /// True when `target` lies within `z` standard errors of the mean.
    /// With a zero standard error the comparison falls back to `abs_floor`.
    pub fn covers(&self, target: f64, z: f64, abs_floor: f64) -> bool {
        (self.mean - target).abs() <= z * self.std_error + abs_floor
    }

    /// `|mean - target|` in standard-error units (0 when both are zero).
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if self.std_error > 0.0 {
            diff / self.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveEstimate {
    pub problem1: Estimate,
    pub problem2: Estimate,
    /// Paired per-trial `problem1 - problem2`.
    pub difference: Estimate,
}

pub fn objective_from_costs(costs: &[TrialCost]) -> ObjectiveEstimate {
    let p1: Vec<f64> = costs.iter().map(|c| c.problem1).collect();
    let p2: Vec<f64> = costs.iter().map(|c| c.problem2).collect();
    let diff: Vec<f64> = costs.iter().map(|c| c.problem1 - c.problem2).collect();
    ObjectiveEstimate {
        problem1: Estimate::from_samples(&p1),
        problem2: Estimate::from_samples(&p2),
        difference: Estimate::from_samples(&diff),
    }
}

/// Monte Carlo estimates of both objectives over an ensemble.
pub fn empirical_objective(ensemble: &TrajectoryEnsemble) -> Result<ObjectiveEstimate> {
    if ensemble.is_empty() {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    let costs: Vec<TrialCost> = ensemble.trajectories.iter().map(|t| t.cost).collect();
    Ok(objective_from_costs(&costs))
}

/// Runs `f` on a dedicated pool with `threads` workers (all cores when `None`).
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
