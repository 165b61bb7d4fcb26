//! The planar point-mass reference scenario: two decoupled double
//! integrators sampled at 0.2 s, pushed by occasional large jolts.

use crate::augmentation::PlantModel;
use crate::coupling::CouplingSpec;
use crate::error::Result;
use crate::linalg::{Matrix, Vector};
use crate::noise::{analytic_moments, Gaussian, NoiseModel};
use crate::synthesis::SynthesisProblem;

pub const SAMPLE_TIME: f64 = 0.2;
pub const HORIZON: usize = 100;

/// State `(p₁, v₁, p₂, v₂)`, input `(a₁, a₂)`, starting at `(5, 0, 5, 0)`.
pub fn plant(horizon: usize) -> PlantModel {
    let ts = SAMPLE_TIME;
    let a = Matrix::from_row_slice(
        4,
        4,
        &[1.0, ts, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, ts, 0.0, 0.0, 0.0, 1.0],
    );
    let b = Matrix::from_row_slice(4, 2, &[0.0, 0.0, ts, 0.0, 0.0, 0.0, 0.0, ts]);
    PlantModel::new(a, b, horizon, Vector::from_vec(vec![5.0, 0.0, 5.0, 0.0]))
        .expect("reference plant is well formed")
}

pub fn state_weight() -> Matrix {
    Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.1, 1.0, 0.1]))
}

pub fn input_weight() -> Matrix {
    Matrix::identity(2, 2)
}

/// Acceleration disturbance: `N(0, 10 I)` with probability 0.8, otherwise
/// `N((70, 0), diag(70, 10))`.
pub fn acceleration_noise() -> NoiseModel {
    NoiseModel::mixture(
        vec![0.8, 0.2],
        vec![
            Gaussian::new(Vector::zeros(2), Matrix::identity(2, 2) * 10.0)
                .expect("valid component"),
            Gaussian::new(
                Vector::from_vec(vec![70.0, 0.0]),
                Matrix::from_diagonal(&Vector::from_vec(vec![70.0, 10.0])),
            )
            .expect("valid component"),
        ],
    )
    .expect("valid mixture")
}

/// State disturbance `w = B ξ`.
pub fn state_noise() -> NoiseModel {
    NoiseModel::pushforward(plant(1).b, acceleration_noise()).expect("matching dimensions")
}

/// Difference-penalty problem with parameters `(β, k, λ)` and analytic moments.
pub fn problem(beta: f64, k: usize, lambda: f64, horizon: usize) -> Result<SynthesisProblem> {
    let plant = plant(horizon);
    let coupling = CouplingSpec::build_difference_penalty(&state_weight(), beta, k)?;
    let moments = analytic_moments(&state_noise(), coupling.q00())?;
    SynthesisProblem::new(plant, coupling, lambda, input_weight(), moments)
}

/// The nine named parameter sets `(β, k, λ)` used throughout the tests.
pub const THETA: [(f64, usize, f64); 9] = [
    (1.0, 1, 0.0),
    (1.0, 1, 1.0),
    (1.0, 1, 6.0),
    (0.0, 0, 1.0),
    (5.0, 1, 1.0),
    (10.0, 1, 1.0),
    (0.0, 0, 0.0),
    (2.0, 9, 0.0),
    (1.5, 9, 0.2),
];

/// `θ_i` for `i ∈ 1..=9` on the full horizon.
pub fn theta(i: usize) -> Result<SynthesisProblem> {
    let (beta, k, lambda) = THETA[i - 1];
    problem(beta, k, lambda, HORIZON)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_disturbance_mean_and_variance() {
        let m = analytic_moments(&acceleration_noise(), &Matrix::identity(2, 2)).unwrap();
        assert!((m.mean[0] - 14.0).abs() < 1e-12);
        assert!((m.central_cov[(0, 0)] - 806.0).abs() < 1e-9);
        assert!((m.central_cov[(1, 1)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn disturbance_only_enters_velocities() {
        let m = analytic_moments(&state_noise(), &Matrix::identity(4, 4)).unwrap();
        for i in [0, 2] {
            assert_eq!(m.mean[i], 0.0);
            assert_eq!(m.central_cov[(i, i)], 0.0);
        }
        assert!((m.mean[1] - 2.8).abs() < 1e-12);
    }

    #[test]
    fn all_thetas_build() {
        for i in 1..=9 {
            let p = theta(i).unwrap();
            assert_eq!(p.plant.horizon, HORIZON);
            assert_eq!(p.coupling.k(), THETA[i - 1].1);
        }
    }
}
