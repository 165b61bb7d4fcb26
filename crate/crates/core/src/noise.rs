//! Disturbance models and the stationary noise statistics used by the risk
//! terms: mean `w̄`, central covariance `Σ`, the `Q₀₀`-weighted third moment
//! `γ = E[d dᵀQ₀₀d]`, `δ = var(dᵀQ₀₀d)` and `ϑ = δ - 4 tr((ΣQ₀₀)²)`, where
//! `d = w - w̄`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_symmetric, is_psd, psd_factor, Matrix, Vector, DEFAULT_TOL};

/// Default seed for Monte Carlo moment estimation.
pub const DEFAULT_MOMENT_SEED: u64 = 0x5EED;
/// Default sample count for Monte Carlo moment estimation.
pub const DEFAULT_MOMENT_SAMPLES: usize = 1_000_000;

/// Multivariate normal with a precomputed covariance square root.
#[derive(Clone, Debug)]
pub struct Gaussian {
    mean: Vector,
    cov: Matrix,
    factor: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dims(
                "gaussian covariance",
                format!("{0}x{0}", mean.len()),
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("gaussian mean: non-finite entry".into()));
        }
        ensure_symmetric(&cov, DEFAULT_TOL, "gaussian covariance")?;
        if !is_psd(&cov, DEFAULT_TOL)? {
            return Err(Error::InvalidInput(
                "gaussian covariance is not positive semidefinite".into(),
            ));
        }
        let factor = psd_factor(&cov)?;
        Ok(Self { mean, cov, factor })
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let n = self.dim();
        let z = Vector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.factor * z
    }
}

#[derive(Clone, Debug)]
pub enum NoiseModel {
    Gaussian(Gaussian),
    Mixture {
        weights: Vec<f64>,
        components: Vec<Gaussian>,
    },
    /// `w = map · ξ` with `ξ` drawn from `inner`.
    Pushforward {
        map: Matrix,
        inner: Box<NoiseModel>,
    },
    Empirical {
        samples: Vec<Vector>,
    },
}

impl NoiseModel {
    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        Ok(NoiseModel::Gaussian(Gaussian::new(mean, cov)?))
    }

    /// Degenerate model that always returns the zero vector.
    pub fn zero(n: usize) -> Self {
        NoiseModel::gaussian(Vector::zeros(n), Matrix::zeros(n, n))
            .expect("zero covariance is valid")
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<Gaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidInput(format!(
                "mixture needs one weight per component ({} weights, {} components)",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidInput(
                "mixture components have different dimensions".into(),
            ));
        }
        Ok(NoiseModel::Mixture {
            weights,
            components,
        })
    }

    pub fn pushforward(map: Matrix, inner: NoiseModel) -> Result<Self> {
        linalg::ensure_finite(&map, "pushforward map")?;
        if map.ncols() != inner.dim() {
            return Err(Error::dims("pushforward map columns", inner.dim(), map.ncols()));
        }
        Ok(NoiseModel::Pushforward {
            map,
            inner: Box::new(inner),
        })
    }

    pub fn empirical(samples: Vec<Vector>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidInput("empirical model has no samples".into()));
        };
        let dim = first.len();
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::InvalidInput(
                "empirical samples have different dimensions".into(),
            ));
        }
        if samples.iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("empirical samples: non-finite entry".into()));
        }
        Ok(NoiseModel::Empirical { samples })
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::Gaussian(g) => g.dim(),
            NoiseModel::Mixture { components, .. } => components[0].dim(),
            NoiseModel::Pushforward { map, .. } => map.nrows(),
            NoiseModel::Empirical { samples } => samples[0].len(),
        }
    }

    /// True when closed-form moments are available.
    pub fn has_analytic_moments(&self) -> bool {
        match self {
            NoiseModel::Empirical { .. } => false,
            NoiseModel::Pushforward { inner, .. } => inner.has_analytic_moments(),
            _ => true,
        }
    }

    /// One i.i.d. draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            NoiseModel::Gaussian(g) => g.sample(rng),
            NoiseModel::Mixture {
                weights,
                components,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                components[pick].sample(rng)
            }
            NoiseModel::Pushforward { map, inner } => map * inner.sample(rng),
            NoiseModel::Empirical { samples } => {
                samples[rng.random_range(0..samples.len())].clone()
            }
        }
    }

    /// Flattens the model to weighted Gaussian components `(π, μ, S)`.
    fn components(&self) -> Result<Vec<(f64, Vector, Matrix)>> {
        match self {
            NoiseModel::Gaussian(g) => Ok(vec![(1.0, g.mean.clone(), g.cov.clone())]),
            NoiseModel::Mixture {
                weights,
                components,
            } => Ok(weights
                .iter()
                .zip(components)
                .map(|(w, g)| (*w, g.mean.clone(), g.cov.clone()))
                .collect()),
            NoiseModel::Pushforward { map, inner } => Ok(inner
                .components()?
                .into_iter()
                .map(|(w, mu, s)| (w, map * mu, map * s * map.transpose()))
                .collect()),
            NoiseModel::Empirical { .. } => Err(Error::Unsupported(
                "analytic moments of an empirical model; use Monte Carlo moments".into(),
            )),
        }
    }
}

/// Stationary disturbance statistics, tied to the `Q₀₀` they were computed for.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMoments {
    pub mean: Vector,
    pub central_cov: Matrix,
    pub gamma: Vector,
    pub delta: f64,
    pub vartheta: f64,
    pub q00_used: Matrix,
}

impl NoiseMoments {
    /// Moments of a deterministic zero disturbance.
    pub fn zero(q00: &Matrix) -> Self {
        let n = q00.nrows();
        Self {
            mean: Vector::zeros(n),
            central_cov: Matrix::zeros(n, n),
            gamma: Vector::zeros(n),
            delta: 0.0,
            vartheta: 0.0,
            q00_used: q00.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `tr(Σ Q₀₀)`.
    pub fn trace_sigma_q00(&self) -> f64 {
        (&self.central_cov * &self.q00_used).trace()
    }
}

/// `ϑ = δ - 4 tr((ΣQ₀₀)²)`.
pub fn vartheta(delta: f64, sigma: &Matrix, q00: &Matrix) -> f64 {
    let sq = sigma * q00;
    delta - 4.0 * (&sq * &sq).trace()
}

fn check_q00(model_dim: usize, q00: &Matrix) -> Result<()> {
    if q00.nrows() != model_dim || q00.ncols() != model_dim {
        return Err(Error::dims(
            "Q00 for noise moments",
            format!("{model_dim}x{model_dim}"),
            format!("{}x{}", q00.nrows(), q00.ncols()),
        ));
    }
    ensure_symmetric(q00, DEFAULT_TOL, "Q00")
}

/// Closed-form moments for Gaussian, mixture and pushforward models.
pub fn analytic_moments(model: &NoiseModel, q00: &Matrix) -> Result<NoiseMoments> {
    check_q00(model.dim(), q00)?;
    let comps = model.components()?;
    let n = model.dim();

    let mean = comps
        .iter()
        .fold(Vector::zeros(n), |acc, (w, mu, _)| acc + mu * *w);

    let mut sigma = Matrix::zeros(n, n);
    let mut gamma = Vector::zeros(n);
    let mut energy_second = 0.0;
    for (w, mu, s) in &comps {
        let m = mu - &mean;
        let qm = q00 * &m;
        let mqm = m.dot(&qm);
        let qs = q00 * s;
        let tr_qs = qs.trace();
        let tr_qsqs = (&qs * &qs).trace();
        let sqm = s * &qm;

        sigma += (s + &m * m.transpose()) * *w;
        gamma += (&m * mqm + &m * tr_qs + &sqm * 2.0) * *w;
        energy_second +=
            w * (mqm * mqm + 4.0 * qm.dot(&sqm) + tr_qs * tr_qs + 2.0 * tr_qsqs + 2.0 * mqm * tr_qs);
    }
    let sigma = linalg::symmetrize(&sigma)?;
    let energy_mean = (q00 * &sigma).trace();
    let delta = (energy_second - energy_mean * energy_mean).max(0.0);
    Ok(NoiseMoments {
        vartheta: vartheta(delta, &sigma, q00),
        mean,
        central_cov: sigma,
        gamma,
        delta,
        q00_used: q00.clone(),
    })
}

/// Standard errors of the Monte Carlo moment estimates, entrywise.
#[derive(Clone, Debug)]
pub struct MomentErrors {
    pub mean: Vector,
    pub central_cov: Matrix,
    pub gamma: Vector,
    pub delta: f64,
}

/// Sample estimates of the moments; deterministic for a fixed seed.
pub fn monte_carlo_moments(
    model: &NoiseModel,
    q00: &Matrix,
    n_samples: usize,
    seed: u64,
) -> Result<NoiseMoments> {
    monte_carlo_moments_with_errors(model, q00, n_samples, seed).map(|(m, _)| m)
}

pub fn monte_carlo_moments_with_errors(
    model: &NoiseModel,
    q00: &Matrix,
    n_samples: usize,
    seed: u64,
) -> Result<(NoiseMoments, MomentErrors)> {
    check_q00(model.dim(), q00)?;
    if n_samples < 2 {
        return Err(Error::InvalidInput("Monte Carlo moments need at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vector> = (0..n_samples).map(|_| model.sample(&mut rng)).collect();
    Ok(sample_moments(&draws, q00))
}

/// Moments and standard errors from a fixed set of draws.
pub fn sample_moments(draws: &[Vector], q00: &Matrix) -> (NoiseMoments, MomentErrors) {
    let n = q00.nrows();
    let count = draws.len() as f64;
    let mut mean = Vector::zeros(n);
    for w in draws {
        mean += w;
    }
    mean /= count;

    // energies s = dᵀQ₀₀d first, needed to center the δ estimator
    let mut energy_mean = 0.0;
    for w in draws {
        let d = w - &mean;
        energy_mean += linalg::quad_form(q00, &d);
    }
    energy_mean /= count;

    let mut acc = RunningMoments::new(n);
    for w in draws {
        let d = w - &mean;
        let s = linalg::quad_form(q00, &d);
        acc.push(w, &d, s, energy_mean);
    }
    acc.finish(mean, q00)
}

struct RunningMoments {
    n: usize,
    count: f64,
    w_sum: Vector,
    w_sq: Vector,
    cov_sum: Matrix,
    cov_sq: Matrix,
    gamma_sum: Vector,
    gamma_sq: Vector,
    delta_sum: f64,
    delta_sq: f64,
}

impl RunningMoments {
    fn new(n: usize) -> Self {
        Self {
            n,
            count: 0.0,
            w_sum: Vector::zeros(n),
            w_sq: Vector::zeros(n),
            cov_sum: Matrix::zeros(n, n),
            cov_sq: Matrix::zeros(n, n),
            gamma_sum: Vector::zeros(n),
            gamma_sq: Vector::zeros(n),
            delta_sum: 0.0,
            delta_sq: 0.0,
        }
    }

    fn push(&mut self, w: &Vector, d: &Vector, s: f64, energy_mean: f64) {
        self.count += 1.0;
        for i in 0..self.n {
            self.w_sum[i] += w[i];
            self.w_sq[i] += w[i] * w[i];
            let g = d[i] * s;
            self.gamma_sum[i] += g;
            self.gamma_sq[i] += g * g;
            for j in 0..self.n {
                let c = d[i] * d[j];
                self.cov_sum[(i, j)] += c;
                self.cov_sq[(i, j)] += c * c;
            }
        }
        let e = (s - energy_mean) * (s - energy_mean);
        self.delta_sum += e;
        self.delta_sq += e * e;
    }

    fn finish(self, mean: Vector, q00: &Matrix) -> (NoiseMoments, MomentErrors) {
        let n = self.count;
        let se = |sum: f64, sq: f64| {
            let m = sum / n;
            ((sq / n - m * m).max(0.0) / (n - 1.0)).sqrt()
        };
        let bessel = n / (n - 1.0);
        let sigma = self.cov_sum.map(|v| v / n * bessel);
        let sigma = linalg::symmetrize(&sigma).expect("square");
        let gamma = self.gamma_sum.map(|v| v / n);
        let delta = self.delta_sum / n * bessel;
        let errors = MomentErrors {
            mean: Vector::from_fn(self.n, |i, _| se(self.w_sum[i], self.w_sq[i])),
            central_cov: Matrix::from_fn(self.n, self.n, |i, j| {
                se(self.cov_sum[(i, j)], self.cov_sq[(i, j)])
            }),
            gamma: Vector::from_fn(self.n, |i, _| se(self.gamma_sum[i], self.gamma_sq[i])),
            delta: se(self.delta_sum, self.delta_sq),
        };
        let moments = NoiseMoments {
            vartheta: vartheta(delta, &sigma, q00),
            mean,
            central_cov: sigma,
            gamma,
            delta,
            q00_used: q00.clone(),
        };
        (moments, errors)
    }
}
