//! Finite-horizon linear-quadratic control with temporally coupled state
//! costs and a predictive-variance risk penalty.
//!
//! The pipeline is: build a [`coupling::CouplingSpec`] and a
//! [`augmentation::PlantModel`], compute [`noise::NoiseMoments`] for the
//! disturbance, solve the backward recursion with
//! [`synthesis::synthesize`], then evaluate the affine history feedback with
//! the Monte Carlo harness in [`simulation`] and the figures of merit in
//! [`metrics`]. [`experiment`] wires all of this to JSON configs and CSV
//! outputs for the command-line tool.

pub mod augmentation;
pub mod config;
pub mod coupling;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod scenario;
pub mod simulation;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
