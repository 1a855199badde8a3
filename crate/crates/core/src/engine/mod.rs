//! Simulation and exact second-moment propagation of the two-time-scale iteration.

mod ensemble;
mod noise;
mod propagate;
mod simulate;

pub use ensemble::{run_ensemble, run_ensemble_with, EnsembleCheckpoint, EnsembleOptions, EnsembleResult};
pub use noise::{CounterRng, NoiseStream, MAX_JOINT_DIM};
pub use propagate::{propagate_covariance, CovarianceCheckpoint};
pub use simulate::{
    reconstruct, simulate, simulate_gained, simulate_transformed, transformed_check, Gain, Initial,
    TrajectoryState, TransformedCheck,
};

/// Squared state norm beyond which a run is declared divergent.
pub(crate) const DIVERGENCE_NORM: f64 = 1e12;
