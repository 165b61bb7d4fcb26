//! Numerical self-checks for a synthesized controller: the textbook
//! reduction, the Bellman equation, the prediction-error identities and
//! Monte Carlo agreement with the predicted objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::augmentation::{AugmentedSystem, PlantModel};
use crate::coupling::CouplingSpec;
use crate::error::Result;
use crate::linalg::{self, Matrix, Vector};
use crate::noise::{analytic_moments, NoiseModel};
use crate::simulation::{
    delta_terms, objective_from_costs, term_integrands, EnsembleConfig, Estimate, Simulator,
    Storage, TrialCost, Trajectory,
};
use crate::synthesis::{q_function, synthesize, value, AffineStage, Controller, RiccatiSolution, SynthesisProblem};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Observed value, in standard errors for Monte Carlo checks.
    pub statistic: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, statistic: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: statistic <= tolerance,
            statistic,
            tolerance,
            detail: detail.into(),
        }
    }

    /// `|mean - target|` in standard errors; exact matches pass even when the
    /// standard error is zero.
    fn from_estimate(name: impl Into<String>, est: &Estimate, target: f64, z: f64, detail: impl Into<String>) -> Self {
        let floor = 1e-9 * target.abs().max(est.mean.abs()).max(1.0);
        let passed = est.covers(target, z, floor);
        let statistic = if (est.mean - target).abs() <= floor { 0.0 } else { est.z_score(target) };
        let detail = format!(
            "{}; mean {} se {} target {}",
            detail.into(),
            est.mean,
            est.std_error,
            target
        );
        Self {
            name: name.into(),
            passed,
            statistic,
            tolerance: z,
            detail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub n_trials: usize,
    pub master_seed: u64,
    pub checks: Vec<CheckResult>,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub n_trials: usize,
    pub master_seed: u64,
    /// Stages for the prediction-error checks; clipped to `1..=N`.
    pub stages: Vec<usize>,
    pub perturbations: usize,
    pub perturbation_scale: f64,
    /// Trials per perturbed controller.
    pub perturbation_trials: usize,
    /// Controller under test, compared against the synthesized one.
    pub controller: Option<Controller>,
}

impl VerifyOptions {
    pub fn new(n_trials: usize, master_seed: u64) -> Self {
        Self {
            n_trials,
            master_seed,
            stages: vec![1, 10, 50, 100],
            perturbations: 20,
            perturbation_scale: 0.05,
            perturbation_trials: n_trials.min(2000),
            controller: None,
        }
    }
}

/// Gains of the plain finite-horizon LQR recursion, via general inverses.
pub fn textbook_gains(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, horizon: usize) -> Option<Vec<Matrix>> {
    let mut p = q.clone();
    let mut gains = vec![Matrix::zeros(0, 0); horizon];
    for t in (0..horizon).rev() {
        let inv = (r + b.transpose() * &p * b).try_inverse()?;
        let k = -(inv * b.transpose() * &p * a);
        p = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        gains[t] = k;
    }
    Some(gains)
}

/// With no coupling, no risk weight and zero-mean Gaussian noise the gains
/// must coincide with the textbook ones.
pub fn check_classical_reduction(plant: &PlantModel, q: &Matrix, r: &Matrix, noise_cov: &Matrix) -> Result<CheckResult> {
    let n = plant.n();
    let coupling = CouplingSpec::build_general(n, 0, vec![vec![q.clone()]])?;
    let noise = NoiseModel::gaussian(Vector::zeros(n), noise_cov.clone())?;
    let moments = analytic_moments(&noise, coupling.q00())?;
    let problem = SynthesisProblem::new(plant.clone(), coupling, 0.0, r.clone(), moments)?;
    let (sol, _) = synthesize(&problem)?;
    let Some(reference) = textbook_gains(&plant.a, &plant.b, q, r, plant.horizon) else {
        return Ok(CheckResult::new("classical_reduction", f64::INFINITY, 1e-10, "textbook recursion is singular"));
    };
    let worst = sol
        .gains
        .iter()
        .zip(&reference)
        .map(|(got, want)| (got - want).abs().max() / want.abs().max().max(1.0))
        .fold(0.0, f64::max);
    Ok(CheckResult::new("classical_reduction", worst, 1e-10, "max relative gain difference over all stages"))
}

fn random_eta(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vector {
    Vector::from_fn(dim, |_, _| rng.random_range(-scale..scale))
}

/// `Q_t(η, μ_t(η)) = J_t(η)` on random histories at every stage.
pub fn check_bellman(problem: &SynthesisProblem, sol: &RiccatiSolution, sys: &AugmentedSystem, samples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = problem.plant.x0.amax().max(1.0);
    let ctrl = sol.controller();
    let mut worst = 0.0_f64;
    for t in 0..sys.horizon() {
        for _ in 0..samples {
            let eta = random_eta(&mut rng, sys.dim(t), scale);
            let j = sol.value_at(t, &eta)?;
            let qv = q_function(problem, sol, sys, t, &eta, &ctrl.control(t, &eta))?;
            worst = worst.max((qv - j).abs() / j.abs().max(1.0));
        }
    }
    Ok(CheckResult::new("bellman_consistency", worst, 1e-9, "max relative |Q_t(eta, u*) - J_t(eta)|"))
}

/// Central differences of `Q_t(η, ·)` vanish at the synthesized control.
pub fn check_stationarity(problem: &SynthesisProblem, sol: &RiccatiSolution, sys: &AugmentedSystem, samples: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = problem.plant.x0.amax().max(1.0);
    let ctrl = sol.controller();
    let mut worst = 0.0_f64;
    for t in 0..sys.horizon() {
        for _ in 0..samples {
            let eta = random_eta(&mut rng, sys.dim(t), scale);
            let u = ctrl.control(t, &eta);
            let size = sol.value_at(t, &eta)?.abs().max(1.0);
            for i in 0..u.len() {
                let h = 1e-4 * (1.0 + u[i].abs());
                let mut up = u.clone();
                up[i] += h;
                let mut dn = u.clone();
                dn[i] -= h;
                let grad = (q_function(problem, sol, sys, t, &eta, &up)? - q_function(problem, sol, sys, t, &eta, &dn)?) / (2.0 * h);
                worst = worst.max(grad.abs() / size);
            }
        }
    }
    Ok(CheckResult::new("stationarity", worst, 1e-5, "max relative finite-difference gradient in u"))
}

/// Per-stage quantities kept from each trial.
#[derive(Clone, Copy, Debug, Default)]
struct StageSample {
    delta: f64,
    delta_sq: f64,
    risk: f64,
    terms: [f64; 3],
    integrands: [f64; 3],
}

#[derive(Clone, Debug)]
struct TrialSample {
    cost: TrialCost,
    decomposition_residual: f64,
    stages: Vec<StageSample>,
}

fn sample_trial(sim: &Simulator, traj: &Trajectory, stages: &[usize]) -> Result<TrialSample> {
    let problem = &sim.config().problem;
    let (coupling, moments) = (&problem.coupling, &problem.moments);
    let mut residual = 0.0_f64;
    for t in 1..=traj.horizon() {
        let d = delta_terms(traj, coupling, moments, t)?;
        let sq = d.delta * d.delta;
        let scale = (d.term1 + d.term2 + d.term3.abs()).max(sq).max(f64::MIN_POSITIVE);
        residual = residual.max((sq - (d.term1 + d.term2 + d.term3)).abs() / scale);
    }
    let mut out = Vec::with_capacity(stages.len());
    for &t in stages {
        let d = delta_terms(traj, coupling, moments, t)?;
        let i = term_integrands(traj, coupling, moments, t)?;
        out.push(StageSample {
            delta: d.delta,
            delta_sq: d.delta * d.delta,
            risk: sim.penalties()[t].risk_form(&traj.etas[t]) + moments.vartheta,
            terms: [d.term1, d.term2, d.term3],
            integrands: [i.term1, i.term2, i.term3],
        });
    }
    Ok(TrialSample {
        cost: traj.cost,
        decomposition_residual: residual,
        stages: out,
    })
}

fn paired(samples: &[TrialSample], f: impl Fn(&TrialSample) -> f64) -> Estimate {
    let v: Vec<f64> = samples.iter().map(f).collect();
    Estimate::from_samples(&v)
}

/// Monte Carlo checks on one ensemble under `controller`.
pub fn check_ensemble(problem: &SynthesisProblem, noise: &NoiseModel, sol: &RiccatiSolution, opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let horizon = problem.plant.horizon;
    let mut stages: Vec<usize> = opts.stages.iter().copied().filter(|&t| t >= 1 && t <= horizon).collect();
    stages.sort_unstable();
    stages.dedup();

    let sim = Simulator::new(EnsembleConfig {
        problem: problem.clone(),
        noise: noise.clone(),
        controller: sol.controller(),
        n_trials: opts.n_trials,
        master_seed: opts.master_seed,
        storage: Storage::Full,
    })?;
    let samples: Vec<TrialSample> = sim
        .map_trials(|traj| sample_trial(&sim, &traj, &stages))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut checks = Vec::new();
    let residual = samples.iter().map(|s| s.decomposition_residual).fold(0.0, f64::max);
    checks.push(CheckResult::new(
        "delta_decomposition",
        residual,
        1e-9,
        "max |delta^2 - (term1 + term2 + term3)| relative to the term magnitudes",
    ));
    for (j, &t) in stages.iter().enumerate() {
        let mean = paired(&samples, |s| s.stages[j].delta);
        checks.push(CheckResult::from_estimate(format!("delta_mean_zero[t={t}]"), &mean, 0.0, 4.0, "mean prediction error"));
        for term in 0..3 {
            let diff = paired(&samples, |s| s.stages[j].terms[term] - s.stages[j].integrands[term]);
            checks.push(CheckResult::from_estimate(
                format!("term{}_expectation[t={t}]", term + 1),
                &diff,
                0.0,
                4.0,
                "paired term minus closed-form integrand",
            ));
        }
        let identity = paired(&samples, |s| s.stages[j].delta_sq - s.stages[j].risk);
        checks.push(CheckResult::from_estimate(
            format!("predictive_variance[t={t}]"),
            &identity,
            0.0,
            4.0,
            "paired delta^2 minus (eta'H eta + zeta'eta + vartheta)",
        ));
    }

    let costs: Vec<TrialCost> = samples.iter().map(|s| s.cost).collect();
    let objective = objective_from_costs(&costs);
    let j0 = value(sol, &problem.plant.x0)?;
    checks.push(CheckResult::from_estimate("value_identity", &objective.problem2, j0, Z99, "reformulated objective vs J_0(x_0)"));
    checks.push(CheckResult::from_estimate(
        "objective_offset",
        &objective.difference,
        problem.objective_offset(),
        Z99,
        "paired original minus reformulated objective vs c",
    ));
    Ok(checks)
}

/// Adds `scale · max(1, |K|max) · G` to every gain and the matching
/// perturbation to every offset, with standard normal `G`.
pub fn perturb_controller(ctrl: &Controller, scale: f64, rng: &mut ChaCha8Rng) -> Controller {
    let stages = ctrl
        .stages
        .iter()
        .map(|s| {
            let gs = scale * s.gain.amax().max(1.0);
            let os = scale * s.offset.amax().max(1.0);
            AffineStage {
                gain: s.gain.map(|v| v + gs * rng.sample::<f64, _>(StandardNormal)),
                offset: s.offset.map(|v| v + os * rng.sample::<f64, _>(StandardNormal)),
            }
        })
        .collect();
    Controller { stages }
}

/// Paired (common random numbers) difference of the original objective,
/// `other - reference`.
pub fn paired_objective_gap(sim: &Simulator, other: &Controller) -> Result<Estimate> {
    let alt = sim.with_controller(other.clone())?;
    let base: Vec<f64> = sim.map_trials(|t| t.cost.problem1);
    let perturbed: Vec<f64> = alt.map_trials(|t| t.cost.problem1);
    let gaps: Vec<f64> = perturbed.iter().zip(&base).map(|(p, b)| p - b).collect();
    Ok(Estimate::from_samples(&gaps))
}

/// No random perturbation of the optimal gains beats them by more than
/// three standard errors.
pub fn check_perturbations(problem: &SynthesisProblem, noise: &NoiseModel, ctrl: &Controller, opts: &VerifyOptions) -> Result<CheckResult> {
    let sim = Simulator::new(EnsembleConfig {
        problem: problem.clone(),
        noise: noise.clone(),
        controller: ctrl.clone(),
        n_trials: opts.perturbation_trials.max(2),
        master_seed: opts.master_seed ^ 0x9E37_79B9_7F4A_7C15,
        storage: Storage::Compact,
    })?;
    let base: Vec<f64> = sim.map_trials(|t| t.cost.problem1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.master_seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..opts.perturbations {
        let alt = sim.with_controller(perturb_controller(ctrl, opts.perturbation_scale, &mut rng))?;
        let gaps: Vec<f64> = alt.map_trials(|t| t.cost.problem1).iter().zip(&base).map(|(p, b)| p - b).collect();
        let est = Estimate::from_samples(&gaps);
        // improvement of the perturbed controller, in standard errors
        let improvement = if est.std_error > 0.0 { -est.mean / est.std_error } else if est.mean < 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(improvement);
    }
    Ok(CheckResult::new(
        "perturbation_optimality",
        worst.max(0.0),
        3.0,
        format!(
            "largest improvement (in SE) of {} perturbed controllers, scale {}, {} paired trials",
            opts.perturbations, opts.perturbation_scale, sim.config().n_trials
        ),
    ))
}

/// Compares a supplied controller with the synthesized one.
pub fn check_supplied(problem: &SynthesisProblem, noise: &NoiseModel, optimal: &Controller, supplied: &Controller, opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let sys = problem.augmented_system()?;
    if let Err(e) = supplied.check_dims(&sys) {
        return Ok(vec![CheckResult::new("supplied_controller_shape", f64::INFINITY, 0.0, e.to_string())]);
    }
    let deviation = supplied
        .stages
        .iter()
        .zip(&optimal.stages)
        .map(|(s, o)| {
            let g = (&s.gain - &o.gain).amax() / o.gain.amax().max(1.0);
            let k = (&s.offset - &o.offset).amax() / o.offset.amax().max(1.0);
            g.max(k)
        })
        .fold(0.0, f64::max);
    let sim = Simulator::new(EnsembleConfig {
        problem: problem.clone(),
        noise: noise.clone(),
        controller: optimal.clone(),
        n_trials: opts.perturbation_trials.max(2),
        master_seed: opts.master_seed ^ 0x9E37_79B9_7F4A_7C15,
        storage: Storage::Compact,
    })?;
    let gap = paired_objective_gap(&sim, supplied)?;
    let excess = if gap.std_error > 0.0 { gap.mean / gap.std_error } else if gap.mean > 1e-9 * gap.mean.abs().max(1.0) { f64::INFINITY } else { 0.0 };
    Ok(vec![
        CheckResult::new("supplied_controller_gains", deviation, 1e-8, "max relative deviation from the synthesized gains and offsets"),
        CheckResult::new(
            "supplied_controller_objective",
            excess.max(0.0),
            3.0,
            format!("paired objective excess over the synthesized controller in SE; mean {} se {}", gap.mean, gap.std_error),
        ),
    ])
}

/// Runs every check.
pub fn verify(problem: &SynthesisProblem, noise: &NoiseModel, opts: &VerifyOptions) -> Result<VerifyReport> {
    let sys = problem.augmented_system()?;
    let (sol, ctrl) = synthesize(problem)?;
    let sigma = &problem.moments.central_cov;
    let mut checks = vec![
        check_classical_reduction(&problem.plant, problem.coupling.q00(), &problem.r, &linalg::symmetrize(sigma)?)?,
        check_bellman(problem, &sol, &sys, 5, opts.master_seed)?,
        check_stationarity(problem, &sol, &sys, 2, opts.master_seed.wrapping_add(1))?,
    ];
    checks.extend(check_ensemble(problem, noise, &sol, opts)?);
    if opts.perturbations > 0 {
        checks.push(check_perturbations(problem, noise, &ctrl, opts)?);
    }
    if let Some(supplied) = &opts.controller {
        checks.extend(check_supplied(problem, noise, &ctrl, supplied, opts)?);
    }
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        n_trials: opts.n_trials,
        master_seed: opts.master_seed,
        checks,
    })
}
