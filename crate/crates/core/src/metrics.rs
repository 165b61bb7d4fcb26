//! Trajectory and ensemble metrics: distance travelled, control effort,
//! maximum distance from the origin and median-centred sample intervals.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::simulation::{compensated_sum, Trajectory, TrajectoryEnsemble};

/// Picks the position coordinates out of a state vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositionExtractor {
    indices: Vec<usize>,
}

impl PositionExtractor {
    /// `one_based` state indices, checked against the state dimension `n`.
    pub fn new(one_based: &[usize], n: usize) -> Result<Self> {
        if one_based.is_empty() {
            return Err(Error::InvalidInput("position extractor needs at least one index".into()));
        }
        if let Some(bad) = one_based.iter().find(|&&i| i == 0 || i > n) {
            return Err(Error::InvalidInput(format!(
                "position index {bad} outside 1..={n}"
            )));
        }
        Ok(Self {
            indices: one_based.iter().map(|i| i - 1).collect(),
        })
    }

    pub fn position(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| x[i]))
    }
}

pub fn total_distance(traj: &Trajectory, extractor: &PositionExtractor) -> f64 {
    traj.states
        .windows(2)
        .map(|w| (extractor.position(&w[1]) - extractor.position(&w[0])).norm())
        .sum()
}

pub fn total_effort(traj: &Trajectory) -> f64 {
    traj.controls.iter().map(|u| u.norm()).sum()
}

/// Includes the initial position.
pub fn max_distance(traj: &Trajectory, extractor: &PositionExtractor) -> f64 {
    traj.states
        .iter()
        .map(|x| extractor.position(x).norm())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialMetrics {
    pub d_tot: f64,
    pub u_tot: f64,
    pub p_max: f64,
}

pub fn trial_metrics(traj: &Trajectory, extractor: &PositionExtractor) -> TrialMetrics {
    TrialMetrics {
        d_tot: total_distance(traj, extractor),
        u_tot: total_effort(traj),
        p_max: max_distance(traj, extractor),
    }
}

/// Lower-middle order statistic, so the median is always a sample.
pub fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

/// Interval centre and length for one sample set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleInterval {
    pub median: f64,
    pub length: f64,
}

/// Shortest closed interval centred at the (lower) median that contains at
/// least `⌈coverage · n⌉` samples.
pub fn sample_interval(samples: &[f64], coverage: f64) -> Result<SampleInterval> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("sample interval of an empty sample".into()));
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidInput(format!("coverage must be in (0, 1], got {coverage}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = lower_median(&sorted);
    let n = sorted.len();
    // guard against 0.6 * 5 = 3.0000000000000004 style round-up
    let need = ((coverage * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut dist: Vec<f64> = sorted.iter().map(|v| (v - median).abs()).collect();
    dist.sort_by(f64::total_cmp);
    Ok(SampleInterval {
        median,
        length: 2.0 * dist[need - 1],
    })
}

pub fn sample_interval_length(samples: &[f64], coverage: f64) -> Result<f64> {
    sample_interval(samples, coverage).map(|s| s.length)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub n_trials: usize,
    pub d_tot_mean: f64,
    pub u_tot_mean: f64,
    pub p_max_mean: f64,
    /// One-based state indices of the interval grid columns.
    pub state_indices: Vec<usize>,
    /// `[t][i]`, `t ∈ 0..=N`.
    pub interval_lengths: Vec<Vec<f64>>,
    pub medians: Vec<Vec<f64>>,
    /// Ensemble mean of `x_{t,i}`.
    pub mean_values: Vec<Vec<f64>>,
    pub mean_positions: Vec<Vector>,
}

pub fn summarize(
    ensemble: &TrajectoryEnsemble,
    extractor: &PositionExtractor,
    state_indices: &[usize],
    coverage: f64,
) -> Result<EnsembleSummary> {
    let trajs = &ensemble.trajectories;
    let Some(first) = trajs.first() else {
        return Err(Error::InvalidInput("cannot summarize an empty ensemble".into()));
    };
    let n = first.states[0].len();
    if let Some(bad) = state_indices.iter().find(|&&i| i == 0 || i > n) {
        return Err(Error::InvalidInput(format!("state index {bad} outside 1..={n}")));
    }
    let count = trajs.len() as f64;
    let per_trial: Vec<TrialMetrics> = trajs.iter().map(|t| trial_metrics(t, extractor)).collect();
    let mean_of = |f: fn(&TrialMetrics) -> f64| compensated_sum(per_trial.iter().map(f)) / count;

    let stages = first.states.len();
    let mut interval_lengths = Vec::with_capacity(stages);
    let mut medians = Vec::with_capacity(stages);
    let mut mean_values = Vec::with_capacity(stages);
    let mut mean_positions = Vec::with_capacity(stages);
    let mut column = vec![0.0; trajs.len()];
    for t in 0..stages {
        let mut lengths = Vec::with_capacity(state_indices.len());
        let mut meds = Vec::with_capacity(state_indices.len());
        let mut means = Vec::with_capacity(state_indices.len());
        for &i in state_indices {
            for (slot, traj) in column.iter_mut().zip(trajs) {
                *slot = traj.states[t][i - 1];
            }
            let interval = sample_interval(&column, 0.0_f64.max(coverage))?;
            lengths.push(interval.length);
            meds.push(interval.median);
            means.push(compensated_sum(column.iter().copied()) / count);
        }
        interval_lengths.push(lengths);
        medians.push(meds);
        mean_values.push(means);

        let dim = extractor.position(&first.states[t]).len();
        let pos = Vector::from_fn(dim, |j, _| {
            compensated_sum(trajs.iter().map(|traj| extractor.position(&traj.states[t])[j])) / count
        });
        mean_positions.push(pos);
    }

    Ok(EnsembleSummary {
        n_trials: trajs.len(),
        d_tot_mean: mean_of(|m| m.d_tot),
        u_tot_mean: mean_of(|m| m.u_tot),
        p_max_mean: mean_of(|m| m.p_max),
        state_indices: state_indices.to_vec(),
        interval_lengths,
        medians,
        mean_values,
        mean_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::TrialCost;
    use proptest::prelude::*;

    fn traj_from(states: Vec<Vector>, controls: Vec<Vector>) -> Trajectory {
        Trajectory {
            states,
            controls,
            noises: Vec::new(),
            etas: Vec::new(),
            z: Vec::new(),
            delta: Vec::new(),
            cost: TrialCost::default(),
            master_seed: 0,
            trial_index: 0,
        }
    }

    fn v(values: &[f64]) -> Vector {
        Vector::from_row_slice(values)
    }

    #[test]
    fn distance_examples() {
        let ex = PositionExtractor::new(&[1], 1).unwrap();
        let constant = traj_from(vec![v(&[2.0]); 4], vec![v(&[0.0]); 3]);
        assert_eq!(total_distance(&constant, &ex), 0.0);
        let moving = traj_from(
            [0.0, 3.0, 3.0, 7.0].iter().map(|x| v(&[*x])).collect(),
            vec![v(&[0.0]); 3],
        );
        assert_eq!(total_distance(&moving, &ex), 7.0);
    }

    #[test]
    fn effort_examples() {
        let t = traj_from(vec![v(&[0.0]); 4], vec![v(&[0.0]); 3]);
        assert_eq!(total_effort(&t), 0.0);
        let t = traj_from(vec![v(&[0.0]); 4], vec![v(&[1.0]), v(&[-2.0]), v(&[2.0])]);
        assert_eq!(total_effort(&t), 5.0);
    }

    #[test]
    fn max_distance_includes_start() {
        let ex = PositionExtractor::new(&[1, 3], 4).unwrap();
        let t = traj_from(
            vec![v(&[5.0, 0.0, 5.0, 0.0]), v(&[1.0, 0.0, 1.0, 0.0])],
            vec![v(&[0.0, 0.0])],
        );
        assert!((max_distance(&t, &ex) - 50f64.sqrt()).abs() < 1e-12);
        let pinned = traj_from(vec![Vector::zeros(4); 3], vec![Vector::zeros(2); 2]);
        assert_eq!(max_distance(&pinned, &ex), 0.0);
    }

    #[test]
    fn extractor_validates() {
        assert!(PositionExtractor::new(&[0], 4).is_err());
        assert!(PositionExtractor::new(&[5], 4).is_err());
        assert!(PositionExtractor::new(&[], 4).is_err());
    }

    #[test]
    fn interval_examples() {
        assert_eq!(sample_interval_length(&[3.0; 7], 0.95).unwrap(), 0.0);
        let range: Vec<f64> = (0..=100).map(f64::from).collect();
        let s = sample_interval(&range, 0.95).unwrap();
        assert_eq!(s.median, 50.0);
        assert_eq!(s.length, 96.0);
        let s = sample_interval(&[-2.0, -1.0, 0.0, 1.0, 2.0], 0.6).unwrap();
        assert_eq!(s.median, 0.0);
        assert_eq!(s.length, 2.0);
        assert!(sample_interval(&[], 0.95).is_err());
        assert!(sample_interval(&[1.0], 0.0).is_err());
    }

    #[test]
    fn even_count_uses_lower_median() {
        let s = sample_interval(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap();
        assert_eq!(s.median, 2.0);
        assert_eq!(s.length, 2.0);
    }

    /// Scans every candidate half-width in increasing order.
    fn brute_force_length(samples: &[f64], coverage: f64) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[(sorted.len() - 1) / 2];
        let need = (coverage * samples.len() as f64 - 1e-9).ceil() as usize;
        let mut radii: Vec<f64> = samples.iter().map(|x| (x - median).abs()).collect();
        radii.sort_by(f64::total_cmp);
        for r in radii {
            let inside = samples.iter().filter(|x| (**x - median).abs() <= r).count();
            if inside >= need {
                return 2.0 * r;
            }
        }
        unreachable!()
    }

    proptest! {
        #[test]
        fn interval_matches_brute_force(samples in proptest::collection::vec(-50i32..50, 1..60), c in 0.05f64..1.0) {
            let s: Vec<f64> = samples.iter().map(|&x| f64::from(x)).collect();
            prop_assert_eq!(sample_interval_length(&s, c).unwrap(), brute_force_length(&s, c));
        }

        #[test]
        fn interval_monotone_in_coverage(samples in proptest::collection::vec(-1e3f64..1e3, 1..80), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(sample_interval_length(&samples, lo).unwrap() <= sample_interval_length(&samples, hi).unwrap());
        }

        #[test]
        fn interval_permutation_and_shift_invariant(samples in proptest::collection::vec(-100i32..100, 1..80), shift in -1000i32..1000) {
            let s: Vec<f64> = samples.iter().map(|&x| f64::from(x)).collect();
            let mut rev = s.clone();
            rev.reverse();
            let shifted: Vec<f64> = s.iter().map(|x| x + f64::from(shift)).collect();
            let base = sample_interval_length(&s, 0.95).unwrap();
            prop_assert_eq!(base, sample_interval_length(&rev, 0.95).unwrap());
            prop_assert_eq!(base, sample_interval_length(&shifted, 0.95).unwrap());
        }
    }

    #[test]
    fn single_and_duplicated_ensembles_agree() {
        let ex = PositionExtractor::new(&[1], 2).unwrap();
        let t = traj_from(
            vec![v(&[1.0, 0.0]), v(&[2.0, 1.0]), v(&[0.5, -1.0])],
            vec![v(&[1.0]), v(&[-3.0])],
        );
        let single = TrajectoryEnsemble { trajectories: vec![t.clone()], master_seed: 0, lambda: 0.0 };
        let double = TrajectoryEnsemble { trajectories: vec![t.clone(), t.clone()], master_seed: 0, lambda: 0.0 };
        let a = summarize(&single, &ex, &[1, 2], 0.95).unwrap();
        let mut b = summarize(&double, &ex, &[1, 2], 0.95).unwrap();
        assert_eq!(a.d_tot_mean, total_distance(&t, &ex));
        assert_eq!(a.u_tot_mean, 4.0);
        assert_eq!(a.p_max_mean, 2.0);
        assert!(a.interval_lengths.iter().flatten().all(|l| *l == 0.0));
        assert_eq!(a.interval_lengths.len(), 3);
        b.n_trials = 1;
        assert_eq!(a, b);
    }
}
