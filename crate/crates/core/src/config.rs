//! JSON experiment and sweep configs.
//!
//! Matrices are row-major nested arrays. Unknown fields are rejected, and
//! every error carries the field path that caused it.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::augmentation::PlantModel;
use crate::coupling::CouplingSpec;
use crate::error::{Error, Result};
use crate::linalg::{self, matrix_from_rows, vector_from_slice, Matrix, DEFAULT_TOL};
use crate::metrics::PositionExtractor;
use crate::noise::{
    analytic_moments, monte_carlo_moments, Gaussian, NoiseModel, NoiseMoments,
    DEFAULT_MOMENT_SAMPLES, DEFAULT_MOMENT_SEED,
};
use crate::synthesis::SynthesisProblem;

pub const SCHEMA_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub plant: PlantConfig,
    pub coupling: CouplingConfig,
    pub lambda: f64,
    #[serde(rename = "R")]
    pub r: Rows,
    pub noise: NoiseConfig,
    pub ensemble: EnsembleSettings,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    /// `blocks[i][j]` is `Q_ij`, for `i, j ∈ 0..=k`.
    General { k: usize, blocks: Vec<Vec<Rows>> },
    OneStep {
        #[serde(rename = "Q")]
        q: Rows,
        #[serde(rename = "Q_bar")]
        q_bar: Rows,
    },
    Difference {
        #[serde(rename = "Q")]
        q: Rows,
        beta: f64,
        k: usize,
    },
}

/// How the second parameter of every Gaussian is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceParam {
    /// `cov` is the covariance matrix.
    #[default]
    Variance,
    /// `cov` is a factor `S` with covariance `S Sᵀ`.
    Stddev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub model: NoiseModelConfig,
    #[serde(default)]
    pub param: CovarianceParam,
    /// Defaults to analytic when the model allows it, otherwise Monte Carlo.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentMethod>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModelConfig {
    Gaussian {
        mean: Vec<f64>,
        cov: Rows,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    Pushforward {
        map: Rows,
        inner: Box<NoiseModelConfig>,
    },
    Empirical {
        samples: Rows,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MomentMethod {
    Analytic,
    MonteCarlo { n_samples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_trials: usize,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// One-based; every state coordinate when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_indices: Option<Vec<usize>>,
    /// One-based; every state coordinate when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval_indices: Option<Vec<usize>>,
    #[serde(default = "default_coverage")]
    pub coverage: f64,
}

fn default_coverage() -> f64 {
    0.95
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            position_indices: None,
            interval_indices: None,
            coverage: default_coverage(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub format: OutputFormat,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write one row per trial.
    #[serde(default)]
    pub trials: bool,
}

/// A validated config turned into library objects.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub problem: SynthesisProblem,
    pub noise: NoiseModel,
    pub n_trials: usize,
    pub master_seed: u64,
    pub extractor: PositionExtractor,
    pub interval_indices: Vec<usize>,
    pub coverage: f64,
    /// `β` for difference-penalty couplings.
    pub beta: Option<f64>,
}

fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))
}

/// Re-labels library validation errors with a config field path.
fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        cfg.check_schema()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_text(path.as_ref())?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_schema(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        Ok(())
    }

    /// Copy with `(β, k, λ)` replaced; needs a difference-penalty coupling.
    pub fn with_theta(&self, beta: f64, k: usize, lambda: f64) -> Result<Self> {
        let CouplingConfig::Difference { q, .. } = &self.coupling else {
            return Err(Error::config(
                "coupling.mode",
                "parameter sweeps need the `difference` coupling mode",
            ));
        };
        let mut next = self.clone();
        next.coupling = CouplingConfig::Difference { q: q.clone(), beta, k };
        next.lambda = lambda;
        Ok(next)
    }

    pub fn build(&self) -> Result<Experiment> {
        self.check_schema()?;
        let p = &self.plant;
        let a = matrix_from_rows(&p.a, "plant.A")?;
        let b = matrix_from_rows(&p.b, "plant.B")?;
        let x0 = vector_from_slice(&p.x0, "plant.x0")?;
        let plant = at("plant", PlantModel::new(a, b, p.horizon, x0))?;
        let n = plant.n();

        let (coupling, beta) = self.build_coupling(n)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        let r = matrix_from_rows(&self.r, "R")?;
        let noise = at(
            "noise.model",
            build_noise(&self.noise.model, self.noise.param, "noise.model"),
        )?;
        if noise.dim() != n {
            return Err(Error::config(
                "noise.model",
                format!("disturbance dimension {} does not match state dimension {n}", noise.dim()),
            ));
        }
        let moments = at("noise.moments", self.moments(&noise, coupling.q00()))?;
        check_input_weight(&r, plant.m())?;
        let problem = at("coupling", SynthesisProblem::new(plant, coupling, self.lambda, r, moments))?;

        if self.ensemble.n_trials == 0 {
            return Err(Error::config("ensemble.n_trials", "must be at least 1"));
        }
        let all: Vec<usize> = (1..=n).collect();
        let positions = self.metrics.position_indices.clone().unwrap_or_else(|| all.clone());
        let extractor = at("metrics.position_indices", PositionExtractor::new(&positions, n))?;
        let interval_indices = self.metrics.interval_indices.clone().unwrap_or(all);
        if interval_indices.is_empty() {
            return Err(Error::config("metrics.interval_indices", "must not be empty"));
        }
        if let Some(bad) = interval_indices.iter().find(|&&i| i == 0 || i > n) {
            return Err(Error::config(
                "metrics.interval_indices",
                format!("index {bad} outside 1..={n}"),
            ));
        }
        let coverage = self.metrics.coverage;
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(Error::config("metrics.coverage", "must be in (0, 1]"));
        }

        Ok(Experiment {
            problem,
            noise,
            n_trials: self.ensemble.n_trials,
            master_seed: self.ensemble.master_seed,
            extractor,
            interval_indices,
            coverage,
            beta,
        })
    }

    fn build_coupling(&self, n: usize) -> Result<(CouplingSpec, Option<f64>)> {
        let check_n = |m: &Matrix, path: &str| -> Result<()> {
            if m.shape() != (n, n) {
                return Err(Error::config(
                    path,
                    format!("expected {n}x{n}, found {}x{}", m.nrows(), m.ncols()),
                ));
            }
            Ok(())
        };
        match &self.coupling {
            CouplingConfig::General { k, blocks } => {
                let mut mats = Vec::with_capacity(blocks.len());
                for (i, row) in blocks.iter().enumerate() {
                    let mut out = Vec::with_capacity(row.len());
                    for (j, block) in row.iter().enumerate() {
                        let path = format!("coupling.blocks[{i}][{j}]");
                        let m = matrix_from_rows(block, &path)?;
                        check_n(&m, &path)?;
                        out.push(m);
                    }
                    mats.push(out);
                }
                let spec = at("coupling.blocks", CouplingSpec::build_general(n, *k, mats))?;
                Ok((spec, None))
            }
            CouplingConfig::OneStep { q, q_bar } => {
                let q = matrix_from_rows(q, "coupling.Q")?;
                check_n(&q, "coupling.Q")?;
                let q_bar = matrix_from_rows(q_bar, "coupling.Q_bar")?;
                check_n(&q_bar, "coupling.Q_bar")?;
                Ok((at("coupling", CouplingSpec::build_one_step(&q, &q_bar))?, None))
            }
            CouplingConfig::Difference { q, beta, k } => {
                let q = matrix_from_rows(q, "coupling.Q")?;
                check_n(&q, "coupling.Q")?;
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(Error::config("coupling.beta", "must be finite and >= 0"));
                }
                if *k > self.plant.horizon {
                    return Err(Error::config(
                        "coupling.k",
                        format!("coupling length {k} exceeds horizon {}", self.plant.horizon),
                    ));
                }
                let spec = at("coupling", CouplingSpec::build_difference_penalty(&q, *beta, *k))?;
                Ok((spec, Some(*beta)))
            }
        }
    }

    fn moments(&self, noise: &NoiseModel, q00: &Matrix) -> Result<NoiseMoments> {
        match &self.noise.moments {
            Some(MomentMethod::Analytic) => analytic_moments(noise, q00),
            Some(MomentMethod::MonteCarlo { n_samples, seed }) => {
                monte_carlo_moments(noise, q00, *n_samples, *seed)
            }
            None if noise.has_analytic_moments() => analytic_moments(noise, q00),
            None => monte_carlo_moments(noise, q00, DEFAULT_MOMENT_SAMPLES, DEFAULT_MOMENT_SEED),
        }
    }
}

fn check_input_weight(r: &Matrix, m: usize) -> Result<()> {
    if r.shape() != (m, m) {
        return Err(Error::config(
            "R",
            format!("expected {m}x{m}, found {}x{}", r.nrows(), r.ncols()),
        ));
    }
    at("R", linalg::ensure_symmetric(r, DEFAULT_TOL, "R"))?;
    if at("R", linalg::min_eigenvalue(r, DEFAULT_TOL))? <= 0.0 {
        return Err(Error::config("R", "must be positive definite"));
    }
    Ok(())
}

fn covariance(rows: &Rows, param: CovarianceParam, path: &str) -> Result<Matrix> {
    let m = matrix_from_rows(rows, path)?;
    Ok(match param {
        CovarianceParam::Variance => m,
        CovarianceParam::Stddev => &m * m.transpose(),
    })
}

fn gaussian(mean: &[f64], cov: &Rows, param: CovarianceParam, path: &str) -> Result<Gaussian> {
    let mean = vector_from_slice(mean, &format!("{path}.mean"))?;
    let cov_path = format!("{path}.cov");
    let cov = covariance(cov, param, &cov_path)?;
    at(&cov_path, Gaussian::new(mean, cov))
}

fn build_noise(cfg: &NoiseModelConfig, param: CovarianceParam, path: &str) -> Result<NoiseModel> {
    match cfg {
        NoiseModelConfig::Gaussian { mean, cov } => {
            Ok(NoiseModel::Gaussian(gaussian(mean, cov, param, path)?))
        }
        NoiseModelConfig::Mixture { components } => {
            let mut weights = Vec::with_capacity(components.len());
            let mut parts = Vec::with_capacity(components.len());
            for (i, c) in components.iter().enumerate() {
                weights.push(c.weight);
                parts.push(gaussian(&c.mean, &c.cov, param, &format!("{path}.components[{i}]"))?);
            }
            at(&format!("{path}.components"), NoiseModel::mixture(weights, parts))
        }
        NoiseModelConfig::Pushforward { map, inner } => {
            let map = matrix_from_rows(map, &format!("{path}.map"))?;
            let inner = build_noise(inner, param, &format!("{path}.inner"))?;
            at(&format!("{path}.map"), NoiseModel::pushforward(map, inner))
        }
        NoiseModelConfig::Empirical { samples } => {
            let rows = matrix_from_rows(samples, &format!("{path}.samples"))?;
            let draws = rows.row_iter().map(|r| r.transpose()).collect();
            at(&format!("{path}.samples"), NoiseModel::empirical(draws))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema: u32,
    /// Inline base experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<ExperimentConfig>>,
    /// Base experiment file, relative to the sweep file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_path: Option<PathBuf>,
    /// Cartesian product of the listed values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ThetaGrid>,
    /// Extra explicit points, evaluated after the grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Theta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGrid {
    pub beta: Vec<f64>,
    pub k: Vec<usize>,
    pub lambda: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    pub beta: f64,
    pub k: usize,
    pub lambda: f64,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(Error::config(
                "schema",
                format!("unsupported schema {}, expected {SCHEMA_VERSION}", cfg.schema),
            ));
        }
        if cfg.base.is_some() == cfg.base_path.is_some() {
            return Err(Error::config("base", "give exactly one of `base` and `base_path`"));
        }
        if cfg.thetas().is_empty() {
            return Err(Error::config("grid", "sweep has no points"));
        }
        Ok(cfg)
    }

    /// Reads the sweep and resolves `base_path` against the sweep file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<(Self, ExperimentConfig)> {
        let path = path.as_ref();
        let cfg = Self::from_json(&read_text(path)?)?;
        let base = match (&cfg.base, &cfg.base_path) {
            (Some(b), _) => (**b).clone(),
            (None, Some(rel)) => {
                let dir = path.parent().unwrap_or_else(|| Path::new("."));
                ExperimentConfig::from_path(dir.join(rel)).map_err(|e| match e {
                    Error::Config { path: p, message } => {
                        Error::config(format!("base_path -> {p}"), message)
                    }
                    other => other,
                })?
            }
            (None, None) => unreachable!("checked in from_json"),
        };
        Ok((cfg, base))
    }

    /// Grid points with `k` slowest and `β` fastest, then the explicit points.
    pub fn thetas(&self) -> Vec<Theta> {
        let mut out = Vec::new();
        if let Some(g) = &self.grid {
            for &k in &g.k {
                for &lambda in &g.lambda {
                    for &beta in &g.beta {
                        out.push(Theta { beta, k, lambda });
                    }
                }
            }
        }
        out.extend(self.points.iter().copied());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_to_rows;
    use crate::scenario;

    fn reference_json() -> String {
        r#"{
          "schema": 1,
          "plant": {
            "A": [[1, 0.2, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0.2], [0, 0, 0, 1]],
            "B": [[0, 0], [0.2, 0], [0, 0], [0, 0.2]],
            "N": 100,
            "x0": [5, 0, 5, 0]
          },
          "coupling": {"mode": "difference", "Q": [[2,0,0,0],[0,0.1,0,0],[0,0,1,0],[0,0,0,0.1]], "beta": 1.5, "k": 9},
          "lambda": 0.2,
          "R": [[1, 0], [0, 1]],
          "noise": {
            "model": {"type": "pushforward", "map": [[0, 0], [0.2, 0], [0, 0], [0, 0.2]],
              "inner": {"type": "mixture", "components": [
                {"weight": 0.8, "mean": [0, 0], "cov": [[10, 0], [0, 10]]},
                {"weight": 0.2, "mean": [70, 0], "cov": [[70, 0], [0, 10]]}
              ]}}
          },
          "ensemble": {"n_trials": 5000, "master_seed": 1},
          "metrics": {"position_indices": [1, 3], "interval_indices": [1, 2]}
        }"#
        .to_string()
    }

    fn config_error_path(e: Error) -> String {
        match e {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn reference_config_matches_scenario() {
        let exp = ExperimentConfig::from_json(&reference_json()).unwrap().build().unwrap();
        let expected = scenario::theta(9).unwrap();
        assert_eq!(exp.problem.plant.a, expected.plant.a);
        assert_eq!(exp.problem.plant.b, expected.plant.b);
        assert_eq!(exp.problem.coupling.assembled(), expected.coupling.assembled());
        assert_eq!(exp.problem.moments, expected.moments);
        assert_eq!(exp.problem.lambda, 0.2);
        assert_eq!(exp.beta, Some(1.5));
        assert_eq!(exp.interval_indices, vec![1, 2]);
        assert_eq!(exp.coverage, 0.95);
    }

    #[test]
    fn round_trip_is_lossless() {
        let cfg = ExperimentConfig::from_json(&reference_json()).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, again);
        let odd = cfg.with_theta(0.1 + 0.2, 3, 1.0 / 3.0).unwrap();
        assert_eq!(odd, ExperimentConfig::from_json(&odd.to_json().unwrap()).unwrap());
    }

    #[test]
    fn ragged_rows_report_field_path() {
        let text = reference_json().replace("[0, 0, 1, 0.2]", "[0, 0, 1]");
        let err = ExperimentConfig::from_json(&text).unwrap().build().unwrap_err();
        assert_eq!(config_error_path(err), "plant.A[2]");
    }

    #[test]
    fn unknown_fields_rejected_with_path() {
        let text = reference_json().replace("\"master_seed\": 1", "\"master_seed\": 1, \"seeed\": 2");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert_eq!(config_error_path(err), "ensemble.seeed");
        let text = reference_json().replace("\"beta\": 1.5", "\"beta\": \"x\"");
        // tagged enums are buffered by serde, so the path stops at the enum
        assert_eq!(config_error_path(ExperimentConfig::from_json(&text).unwrap_err()), "coupling");
    }

    #[test]
    fn schema_version_checked() {
        let text = reference_json().replace("\"schema\": 1", "\"schema\": 2");
        assert_eq!(config_error_path(ExperimentConfig::from_json(&text).unwrap_err()), "schema");
    }

    #[test]
    fn invalid_values_report_paths() {
        let cases = [
            ("\"lambda\": 0.2", "\"lambda\": -1", "lambda"),
            ("\"n_trials\": 5000", "\"n_trials\": 0", "ensemble.n_trials"),
            ("\"k\": 9", "\"k\": 101", "coupling.k"),
            ("\"beta\": 1.5", "\"beta\": -1", "coupling.beta"),
            ("\"interval_indices\": [1, 2]", "\"interval_indices\": [5]", "metrics.interval_indices"),
            ("\"weight\": 0.8", "\"weight\": 0.7", "noise.model.inner.components"),
            ("[[70, 0], [0, 10]]", "[[70, 0], [0, -10]]", "noise.model.inner.components[1].cov"),
            ("\"R\": [[1, 0], [0, 1]]", "\"R\": [[1, 0], [0, 0]]", "R"),
        ];
        for (from, to, path) in cases {
            let text = reference_json().replace(from, to);
            assert_ne!(text, reference_json(), "pattern {from} not found");
            let err = ExperimentConfig::from_json(&text).and_then(|c| c.build()).unwrap_err();
            assert_eq!(config_error_path(err), path, "{to}");
        }
    }

    #[test]
    fn stddev_param_squares_the_factor() {
        let text = reference_json().replace("\"noise\": {", "\"noise\": {\"param\": \"stddev\",");
        let exp = ExperimentConfig::from_json(&text).unwrap().build().unwrap();
        let NoiseModel::Pushforward { inner, .. } = &exp.noise else { panic!() };
        let NoiseModel::Mixture { components, .. } = inner.as_ref() else { panic!() };
        assert_eq!(components[1].cov()[(0, 0)], 4900.0);
        assert_eq!(components[0].cov()[(1, 1)], 100.0);
    }

    #[test]
    fn monte_carlo_moments_when_requested() {
        let text = reference_json().replace(
            "\"noise\": {",
            "\"noise\": {\"moments\": {\"method\": \"monte_carlo\", \"n_samples\": 1000, \"seed\": 3},",
        );
        let a = ExperimentConfig::from_json(&text).unwrap().build().unwrap();
        let b = ExperimentConfig::from_json(&text).unwrap().build().unwrap();
        assert_eq!(a.problem.moments, b.problem.moments);
        assert_ne!(a.problem.moments, scenario::theta(9).unwrap().moments);
    }

    #[test]
    fn other_coupling_modes_parse() {
        let q = matrix_to_rows(&scenario::state_weight());
        let mut cfg = ExperimentConfig::from_json(&reference_json()).unwrap();
        cfg.coupling = CouplingConfig::OneStep { q: q.clone(), q_bar: q.clone() };
        let exp = cfg.build().unwrap();
        assert_eq!(exp.problem.coupling.k(), 1);
        assert_eq!(exp.beta, None);
        assert!(cfg.with_theta(1.0, 1, 1.0).is_err());

        let zero = vec![vec![0.0; 4]; 4];
        cfg.coupling = CouplingConfig::General { k: 1, blocks: vec![vec![q.clone(), zero.clone()], vec![zero.clone(), zero]] };
        assert_eq!(cfg.build().unwrap().problem.coupling.k(), 1);
    }

    #[test]
    fn sweep_expands_grid_in_order() {
        let sweep = format!(
            r#"{{"schema": 1, "base": {}, "grid": {{"beta": [0, 1], "k": [1, 9], "lambda": [0]}}, "points": [{{"beta": 0, "k": 0, "lambda": 0}}]}}"#,
            reference_json()
        );
        let cfg = SweepConfig::from_json(&sweep).unwrap();
        let t = cfg.thetas();
        assert_eq!(t.len(), 5);
        assert_eq!((t[0].beta, t[0].k), (0.0, 1));
        assert_eq!((t[1].beta, t[1].k), (1.0, 1));
        assert_eq!(t[2].k, 9);
        assert_eq!(t[4], Theta { beta: 0.0, k: 0, lambda: 0.0 });
        assert_eq!(cfg, SweepConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap());
    }

    #[test]
    fn sweep_requires_points_and_one_base() {
        let empty = format!(r#"{{"schema": 1, "base": {}}}"#, reference_json());
        assert_eq!(config_error_path(SweepConfig::from_json(&empty).unwrap_err()), "grid");
        let none = r#"{"schema": 1, "points": [{"beta": 0, "k": 0, "lambda": 0}]}"#;
        assert_eq!(config_error_path(SweepConfig::from_json(none).unwrap_err()), "base");
    }
}
