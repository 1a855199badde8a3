//! Linear two-time-scale stochastic approximation: closed-form asymptotic
//! covariances and the machinery to check them by exact moment propagation,
//! Monte Carlo ensembles and normality tests.

pub mod config;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod export;
pub mod linalg;
pub mod model;
pub mod report;
pub mod schedules;
pub mod theory;

pub use engine::{
    propagate_covariance, run_ensemble, run_ensemble_with, simulate, simulate_gained, simulate_transformed,
    transformed_check, CovarianceCheckpoint, EnsembleOptions, EnsembleResult, Gain, Initial, NoiseStream,
    TrajectoryState,
};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use estimator::{normality_check, scaled_covariances, standard_errors, NormalityReport, Tolerance};
pub use linalg::{Matrix, Vector};
pub use model::{averaging_system, fixed_point, random_system, validate_system, NoiseDistribution, NoiseSpec, SystemSpec};
pub use report::{Check, ValidationReport};
pub use schedules::{ScheduleParams, SchedulePair, StepSchedule};
pub use theory::{
    gained_reduced_covariance, gained_system, l_sequence, random_stable_gain, l_sequence_auto, optimal_gain_covariance, predict_full,
    predict_reduced, CovariancePrediction, LSequence,
};
