//! Subcommand implementations: controller artifacts, simulation summaries,
//! parameter sweeps and verification reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! results give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows, vector_from_slice};
use crate::metrics::{summarize, trial_metrics, EnsembleSummary, TrialMetrics};
use crate::simulation::{
    objective_from_costs, with_threads, EnsembleConfig, Estimate, Simulator, Storage, TrialCost,
};
use crate::synthesis::{synthesize, value, AffineStage, Controller, RiccatiSolution};
use crate::verify::{verify, VerifyOptions, VerifyReport};

pub const CONTROLLER_FILE: &str = "controller.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const INTERVALS_FILE: &str = "intervals.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const FRONTIER_FILE: &str = "frontier.csv";
pub const VERIFY_FILE: &str = "verify.json";

pub const SUMMARY_HEADER: &str = "beta,k,lambda,n_trials,master_seed,d_tot_mean,u_tot_mean,p_max_mean,value_J0,mc_objective_mean,mc_objective_se";
pub const INTERVALS_HEADER: &str = "t,state_index,median,interval_length,mean_value";
pub const TRIALS_HEADER: &str = "trial,d_tot,u_tot,p_max,problem1_cost,problem2_cost";
pub const FRONTIER_HEADER: &str = "beta,k,lambda,d_tot_mean,u_tot_mean,p_max_mean,value_J0,error";

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(n) = self.trials {
            cfg.ensemble.n_trials = n;
        }
        if let Some(s) = self.seed {
            cfg.ensemble.master_seed = s;
        }
    }
}

/// Serialized controller with per-stage diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDoc {
    pub schema: u32,
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub value_j0: f64,
    pub objective_offset: f64,
    /// Stages `0..=N`; the last one has no gain.
    pub stages: Vec<StageDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub t: usize,
    pub n_t: usize,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub q: Vec<f64>,
    pub r: f64,
}

impl ControllerDoc {
    pub fn new(exp: &Experiment, sol: &RiccatiSolution) -> Result<Self> {
        let problem = &exp.problem;
        let horizon = problem.plant.horizon;
        let stages = (0..=horizon)
            .map(|t| StageDoc {
                t,
                n_t: sol.p[t].nrows(),
                gain: sol.gains.get(t).map(matrix_to_rows),
                kappa: sol.offsets.get(t).map(|v| v.iter().copied().collect()),
                p: matrix_to_rows(&sol.p[t]),
                q: sol.q[t].iter().copied().collect(),
                r: sol.r[t],
            })
            .collect();
        Ok(Self {
            schema: crate::config::SCHEMA_VERSION,
            horizon,
            n: problem.plant.n(),
            m: problem.plant.m(),
            k: problem.coupling.k(),
            lambda: problem.lambda,
            beta: exp.beta,
            value_j0: value(sol, &problem.plant.x0)?,
            objective_offset: problem.objective_offset(),
            stages,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(format!("controller.{}", e.path()), e.into_inner().to_string()))
    }

    pub fn controller(&self) -> Result<Controller> {
        let mut stages = Vec::with_capacity(self.horizon);
        for s in self.stages.iter().take(self.horizon) {
            let path = format!("controller.stages[{}]", s.t);
            let (Some(gain), Some(kappa)) = (&s.gain, &s.kappa) else {
                return Err(Error::config(path, "missing K or kappa"));
            };
            stages.push(AffineStage {
                gain: matrix_from_rows(gain, &format!("{path}.K"))?,
                offset: vector_from_slice(kappa, &format!("{path}.kappa"))?,
            });
        }
        if stages.len() != self.horizon {
            return Err(Error::config("controller.stages", format!("expected {} stages", self.horizon)));
        }
        Ok(Controller { stages })
    }
}

fn out_dir(out: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn load(config: &Path, ov: &Overrides) -> Result<(ExperimentConfig, Experiment)> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    ov.apply(&mut cfg);
    let exp = cfg.build()?;
    Ok((cfg, exp))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|b| b.to_string()).unwrap_or_default()
}

pub fn synthesize_doc(exp: &Experiment) -> Result<ControllerDoc> {
    let (sol, _) = synthesize(&exp.problem)?;
    ControllerDoc::new(exp, &sol)
}

pub fn cmd_synthesize(config: &Path, out: Option<&Path>, ov: &Overrides) -> Result<PathBuf> {
    let (cfg, exp) = load(config, ov)?;
    let doc = synthesize_doc(&exp)?;
    write_file(&out_dir(out, &cfg), CONTROLLER_FILE, &(serde_json::to_string_pretty(&doc)? + "\n"))
}

/// Everything `simulate` reports.
#[derive(Clone, Debug)]
pub struct SimulationOutcome {
    pub summary: EnsembleSummary,
    pub trials: Vec<(TrialMetrics, TrialCost)>,
    pub value_j0: f64,
    pub objective_offset: f64,
    /// Monte Carlo mean of the reformulated objective, comparable with `value_j0`.
    pub objective: Estimate,
}

pub fn simulate_experiment(exp: &Experiment) -> Result<SimulationOutcome> {
    let (sol, controller) = synthesize(&exp.problem)?;
    let sim = Simulator::new(EnsembleConfig {
        problem: exp.problem.clone(),
        noise: exp.noise.clone(),
        controller,
        n_trials: exp.n_trials,
        master_seed: exp.master_seed,
        storage: Storage::Compact,
    })?;
    let ensemble = sim.run_ensemble();
    let summary = summarize(&ensemble, &exp.extractor, &exp.interval_indices, exp.coverage)?;
    let trials: Vec<(TrialMetrics, TrialCost)> = ensemble
        .trajectories
        .iter()
        .map(|t| (trial_metrics(t, &exp.extractor), t.cost))
        .collect();
    let costs: Vec<TrialCost> = trials.iter().map(|(_, c)| *c).collect();
    Ok(SimulationOutcome {
        summary,
        trials,
        value_j0: value(&sol, &exp.problem.plant.x0)?,
        objective_offset: exp.problem.objective_offset(),
        objective: objective_from_costs(&costs).problem2,
    })
}

pub fn summary_csv(exp: &Experiment, o: &SimulationOutcome) -> String {
    let s = &o.summary;
    format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{},{},{},{},{},{},{}\n",
        opt_f64(exp.beta),
        exp.problem.coupling.k(),
        exp.problem.lambda,
        exp.n_trials,
        exp.master_seed,
        s.d_tot_mean,
        s.u_tot_mean,
        s.p_max_mean,
        o.value_j0,
        o.objective.mean,
        o.objective.std_error
    )
}

pub fn intervals_csv(summary: &EnsembleSummary) -> String {
    let mut out = String::from(INTERVALS_HEADER);
    out.push('\n');
    for (t, lengths) in summary.interval_lengths.iter().enumerate() {
        for (j, &i) in summary.state_indices.iter().enumerate() {
            out.push_str(&format!(
                "{t},{i},{},{},{}\n",
                summary.medians[t][j], lengths[j], summary.mean_values[t][j]
            ));
        }
    }
    out
}

pub fn trials_csv(trials: &[(TrialMetrics, TrialCost)]) -> String {
    let mut out = String::from(TRIALS_HEADER);
    out.push('\n');
    for (i, (m, c)) in trials.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{},{},{}\n", m.d_tot, m.u_tot, m.p_max, c.problem1, c.problem2));
    }
    out
}

/// Paths of the files written by `simulate`.
#[derive(Clone, Debug)]
pub struct SimulateFiles {
    pub summary: PathBuf,
    pub intervals: PathBuf,
    pub trials: Option<PathBuf>,
}

pub fn cmd_simulate(config: &Path, out: Option<&Path>, ov: &Overrides) -> Result<SimulateFiles> {
    let (cfg, exp) = load(config, ov)?;
    let outcome = with_threads(ov.threads, || simulate_experiment(&exp))??;
    let dir = out_dir(out, &cfg);
    Ok(SimulateFiles {
        summary: write_file(&dir, SUMMARY_FILE, &summary_csv(&exp, &outcome))?,
        intervals: write_file(&dir, INTERVALS_FILE, &intervals_csv(&outcome.summary))?,
        trials: if cfg.output.trials {
            Some(write_file(&dir, TRIALS_FILE, &trials_csv(&outcome.trials))?)
        } else {
            None
        },
    })
}

/// One frontier row; `Err` keeps the failure message for the `error` column.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierRow {
    pub beta: f64,
    pub k: usize,
    pub lambda: f64,
    pub result: std::result::Result<FrontierPoint, String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontierPoint {
    pub d_tot_mean: f64,
    pub u_tot_mean: f64,
    pub p_max_mean: f64,
    pub value_j0: f64,
}

fn frontier_point(cfg: &ExperimentConfig) -> Result<FrontierPoint> {
    let exp = cfg.build()?;
    let (sol, controller) = synthesize(&exp.problem)?;
    let sim = Simulator::new(EnsembleConfig {
        problem: exp.problem.clone(),
        noise: exp.noise.clone(),
        controller,
        n_trials: exp.n_trials,
        master_seed: exp.master_seed,
        storage: Storage::Compact,
    })?;
    let metrics = sim.map_trials(|t| trial_metrics(&t, &exp.extractor));
    let mean = |f: fn(&TrialMetrics) -> f64| {
        Estimate::from_samples(&metrics.iter().map(f).collect::<Vec<_>>()).mean
    };
    Ok(FrontierPoint {
        d_tot_mean: mean(|m| m.d_tot),
        u_tot_mean: mean(|m| m.u_tot),
        p_max_mean: mean(|m| m.p_max),
        value_j0: value(&sol, &exp.problem.plant.x0)?,
    })
}

/// Evaluates every sweep point; failures are recorded, not propagated.
pub fn run_sweep(sweep: &SweepConfig, base: &ExperimentConfig) -> Vec<FrontierRow> {
    sweep
        .thetas()
        .par_iter()
        .map(|th| FrontierRow {
            beta: th.beta,
            k: th.k,
            lambda: th.lambda,
            result: base
                .with_theta(th.beta, th.k, th.lambda)
                .and_then(|cfg| frontier_point(&cfg))
                .map_err(|e| e.to_string()),
        })
        .collect()
}

pub fn frontier_csv(rows: &[FrontierRow]) -> String {
    let mut out = String::from(FRONTIER_HEADER);
    out.push('\n');
    for row in rows {
        let (b, k, l) = (row.beta, row.k, row.lambda);
        match &row.result {
            Ok(p) => out.push_str(&format!(
                "{b},{k},{l},{},{},{},{},\n",
                p.d_tot_mean, p.u_tot_mean, p.p_max_mean, p.value_j0
            )),
            Err(msg) => {
                let quoted = msg.replace('"', "\"\"");
                out.push_str(&format!("{b},{k},{l},,,,,\"{quoted}\"\n"));
            }
        }
    }
    out
}

pub fn cmd_sweep(sweep_path: &Path, out: Option<&Path>, ov: &Overrides) -> Result<PathBuf> {
    let (sweep, mut base) = SweepConfig::from_path(sweep_path)?;
    ov.apply(&mut base);
    // surface config errors of the base itself instead of one per row
    base.build()?;
    let rows = with_threads(ov.threads, || run_sweep(&sweep, &base))?;
    write_file(&out_dir(out, &base), FRONTIER_FILE, &frontier_csv(&rows))
}

pub fn cmd_verify(
    config: &Path,
    out: Option<&Path>,
    controller: Option<&Path>,
    ov: &Overrides,
) -> Result<(VerifyReport, PathBuf)> {
    let (cfg, exp) = load(config, ov)?;
    let mut opts = VerifyOptions::new(exp.n_trials, exp.master_seed);
    if let Some(path) = controller {
        opts.controller = Some(ControllerDoc::from_path(path)?.controller()?);
    }
    let report = with_threads(ov.threads, || verify(&exp.problem, &exp.noise, &opts))??;
    let path = write_file(&out_dir(out, &cfg), VERIFY_FILE, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok((report, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CouplingConfig, NoiseModelConfig, Theta, ThetaGrid};
    use crate::linalg::Matrix;

    fn base_config(n_trials: usize) -> ExperimentConfig {
        let q = matrix_to_rows(&crate::scenario::state_weight());
        let b = matrix_to_rows(&crate::scenario::plant(1).b);
        let json = serde_json::json!({
            "schema": 1,
            "plant": {
                "A": matrix_to_rows(&crate::scenario::plant(1).a),
                "B": b,
                "N": 30,
                "x0": [5, 0, 5, 0]
            },
            "coupling": {"mode": "difference", "Q": q, "beta": 1.0, "k": 2},
            "lambda": 1.0,
            "R": [[1, 0], [0, 1]],
            "noise": {"model": {"type": "pushforward", "map": b, "inner": {"type": "mixture", "components": [
                {"weight": 0.8, "mean": [0, 0], "cov": [[10, 0], [0, 10]]},
                {"weight": 0.2, "mean": [70, 0], "cov": [[70, 0], [0, 10]]}
            ]}}},
            "ensemble": {"n_trials": n_trials, "master_seed": 4},
            "metrics": {"position_indices": [1, 3], "interval_indices": [1, 2]}
        });
        ExperimentConfig::from_json(&json.to_string()).unwrap()
    }

    #[test]
    fn controller_doc_round_trips() {
        let exp = base_config(10).build().unwrap();
        let (sol, ctrl) = synthesize(&exp.problem).unwrap();
        let doc = ControllerDoc::new(&exp, &sol).unwrap();
        let dims: Vec<usize> = doc.stages.iter().map(|s| s.n_t).collect();
        assert_eq!(&dims[..4], &[4, 8, 12, 12]);
        assert!(doc.stages[30].gain.is_none());
        let text = serde_json::to_string(&doc).unwrap();
        let back: ControllerDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.controller().unwrap(), ctrl);
    }

    #[test]
    fn zero_noise_intervals_vanish() {
        let mut cfg = base_config(20);
        cfg.noise.model = NoiseModelConfig::Gaussian { mean: vec![0.0; 4], cov: matrix_to_rows(&Matrix::zeros(4, 4)) };
        let exp = cfg.build().unwrap();
        let outcome = simulate_experiment(&exp).unwrap();
        assert!(outcome.summary.interval_lengths.iter().flatten().all(|l| *l == 0.0));
        assert_eq!(outcome.objective.std_error, 0.0);
        assert!((outcome.objective.mean - outcome.value_j0).abs() <= 1e-9 * outcome.value_j0);
        let csv = intervals_csv(&outcome.summary);
        assert_eq!(csv.lines().count(), 1 + 31 * 2);
        assert!(csv.starts_with(INTERVALS_HEADER));
    }

    #[test]
    fn single_point_sweep_matches_simulate() {
        let cfg = base_config(40);
        let sweep = SweepConfig {
            schema: 1,
            base: Some(Box::new(cfg.clone())),
            base_path: None,
            grid: Some(ThetaGrid { beta: vec![1.0], k: vec![2], lambda: vec![1.0] }),
            points: vec![Theta { beta: 1.0, k: 2, lambda: 1.0 }, Theta { beta: 1.0, k: 500, lambda: 1.0 }],
        };
        let rows = run_sweep(&sweep, &cfg);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], rows[1]);
        assert!(rows[2].result.is_err());
        let outcome = simulate_experiment(&cfg.build().unwrap()).unwrap();
        let p = rows[0].result.clone().unwrap();
        assert_eq!(p.d_tot_mean, outcome.summary.d_tot_mean);
        assert_eq!(p.u_tot_mean, outcome.summary.u_tot_mean);
        assert_eq!(p.p_max_mean, outcome.summary.p_max_mean);
        assert_eq!(p.value_j0, outcome.value_j0);
        let csv = frontier_csv(&rows);
        assert!(csv.lines().nth(3).unwrap().contains("exceeds horizon"));
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = base_config(10);
        Overrides { trials: Some(3), seed: Some(9), threads: None }.apply(&mut cfg);
        assert_eq!((cfg.ensemble.n_trials, cfg.ensemble.master_seed), (3, 9));
        assert!(matches!(cfg.coupling, CouplingConfig::Difference { .. }));
    }
}
