//! Fixtures shared by the benchmarks.

use twotime_core::{Matrix, NoiseDistribution, NoiseSpec, ScheduleParams, SchedulePair, SystemSpec, Vector};

/// The 1x1 system with `A11 = 2`, the other blocks 1, `b = (1, 2)` and unit noise.
pub fn scalar_system() -> SystemSpec {
    let s = |x: f64| Matrix::from_element(1, 1, x);
    let noise = NoiseSpec::new(s(1.0), s(0.0), s(1.0), NoiseDistribution::Gaussian);
    SystemSpec::new(s(2.0), s(1.0), s(1.0), s(1.0), Vector::from_element(1, 1.0), Vector::from_element(1, 2.0), noise)
        .expect("fixture is valid")
}

pub fn schedules() -> SchedulePair {
    SchedulePair::from_params(ScheduleParams::new(1.0, 10.0, 1.0), ScheduleParams::new(1.0, 10.0, 0.7))
        .expect("fixture schedules are valid")
}
