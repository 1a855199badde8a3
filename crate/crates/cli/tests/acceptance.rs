//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.
//! Tests hold a shared lock so the timing of one is not inflated by another.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use twotime_cli::commands::{averaging_report, gain_report, DOMINANCE_TOLERANCE};
use twotime_core::estimator::estimate_checkpoint;
use twotime_core::linalg::relative_frobenius;
use twotime_core::{
    averaging_system, l_sequence_auto, normality_check, predict_full, predict_reduced, propagate_covariance,
    random_system, run_ensemble, transformed_check, validate_system, Initial, Matrix, NoiseDistribution, NoiseSpec,
    ScheduleParams, SchedulePair, SystemSpec, Tolerance, Vector,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn s(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

fn sys_a(distribution: NoiseDistribution) -> SystemSpec {
    let noise = NoiseSpec::new(s(1.0), s(0.0), s(1.0), distribution);
    SystemSpec::new(s(2.0), s(1.0), s(1.0), s(1.0), Vector::from_element(1, 1.0), Vector::from_element(1, 2.0), noise)
        .unwrap()
}

fn pair(slow: (f64, f64, f64), fast: (f64, f64, f64)) -> SchedulePair {
    SchedulePair::from_params(ScheduleParams::new(slow.0, slow.1, slow.2), ScheduleParams::new(fast.0, fast.1, fast.2))
        .unwrap()
}

/// `beta_k = 1/(k+1)` with a fast schedule decaying like `k^-0.6`.
fn harmonic_pair() -> SchedulePair {
    pair((1.0, 1.0, 1.0), (1.0, 10.0, 0.6))
}

/// Writes to the stderr handle directly, which the test harness does not capture.
fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn report(id: u32, passed: bool, detail: &str, elapsed: Duration, limit: Duration) -> bool {
    let within = elapsed < limit;
    let ok = passed && within;
    say(&format!(
        "criterion {id}: {} {detail} [{:.2}s, limit {}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    ));
    ok
}

#[test]
fn criterion_1_full_and_reduced_predictions_agree() {
    let _guard = lock();
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let beta_bar = [0.0, 0.5, 1.0][i % 3];
        let spec = random_system(&mut rng, n, m, beta_bar, 0.05).unwrap();
        let full = predict_full(&spec, beta_bar).unwrap();
        let reduced = predict_reduced(&spec, beta_bar).unwrap();
        worst = worst.max(relative_frobenius(&full.sigma11, &reduced));
    }
    let ok = report(
        1,
        worst < 1e-8,
        &format!("max relative Frobenius gap {worst:.2e} over 100 specs"),
        start.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}

#[test]
fn criterion_2_averaging_recovers_inverse_sandwich() {
    let _guard = lock();
    let start = Instant::now();
    let a = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
    let gamma = Matrix::identity(2, 2);
    let a_inv = a.clone().try_inverse().unwrap();
    let closed = &a_inv * a_inv.transpose();
    let spec = averaging_system(&a, &Vector::zeros(2), &gamma).unwrap();
    let reduced = predict_reduced(&spec, 1.0).unwrap();
    let deterministic = relative_frobenius(&reduced, &closed);

    let mc = averaging_report(&a, &Vector::zeros(2), &gamma, 4000, 100_000, 1).unwrap();
    let ok = report(
        2,
        deterministic <= 1e-8 && mc.passed(),
        &format!(
            "reduced vs closed form {deterministic:.2e}; empirical {:?} vs {:?}, error/allowance {:.3}",
            mc.estimate.as_slice(),
            closed.as_slice(),
            mc.worst_ratio
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

#[test]
fn criterion_3_propagation_reaches_prediction() {
    let _guard = lock();
    let start = Instant::now();
    let spec = sys_a(NoiseDistribution::Gaussian);
    let pair = pair((1.0, 10.0, 1.0), (1.0, 10.0, 0.7));
    let prediction = predict_full(&spec, pair.beta_bar).unwrap();
    let cps = propagate_covariance(&spec, &pair, &Matrix::zeros(2, 2), 1_000_000, &[1_000_000]).unwrap();
    let last = cps.last().unwrap();
    let err = relative_frobenius(&last.sigma11, &prediction.sigma11);
    let joint = relative_frobenius(&last.joint(), &prediction.joint());
    let ok = report(
        3,
        err < 0.05,
        &format!("Sigma11 relative error {err:.4} (joint blocks {joint:.4}) at k=1e6"),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

#[test]
fn criterion_4_ensemble_covariance_matches() {
    let _guard = lock();
    let start = Instant::now();
    let spec = sys_a(NoiseDistribution::Gaussian);
    let pair = pair((1.0, 10.0, 1.0), (1.0, 10.0, 0.7));
    let prediction = predict_full(&spec, pair.beta_bar).unwrap();
    let result = run_ensemble(&spec, &pair, 4000, 100_000, &[100_000], 1).unwrap();
    let est = estimate_checkpoint(result.last().unwrap()).unwrap();
    let tol = Tolerance::Max { relative: 0.10, standard_errors: 4.0 };
    let r11 = tol.worst_ratio(&est.estimate.sigma11, &est.standard_error.sigma11, &prediction.sigma11);
    let r22 = tol.worst_ratio(&est.estimate.sigma22, &est.standard_error.sigma22, &prediction.sigma22);
    let ok = report(
        4,
        r11 <= 1.0 && r22 <= 1.0,
        &format!(
            "Sigma11 {:.4} vs {:.4} (ratio {r11:.3}), Sigma22 {:.4} vs {:.4} (ratio {r22:.3})",
            est.estimate.sigma11[(0, 0)],
            prediction.sigma11[(0, 0)],
            est.estimate.sigma22[(0, 0)],
            prediction.sigma22[(0, 0)]
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

#[test]
fn criterion_5_transformed_iteration_and_vanishing_coupling() {
    let _guard = lock();
    let start = Instant::now();
    let pair = pair((0.1, 10.0, 1.0), (0.5, 10.0, 0.7));
    let mut rng = StdRng::seed_from_u64(55);
    let mut specs = vec![sys_a(NoiseDistribution::Gaussian)];
    for _ in 0..20 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=4);
        specs.push(random_system(&mut rng, n, m, pair.beta_bar, 0.05).unwrap());
    }
    let mut worst_reconstruction = 0.0f64;
    let mut worst_l = 0.0f64;
    let mut sys_a_l = f64::NAN;
    for (i, spec) in specs.iter().enumerate() {
        assert!(validate_system(spec, &pair).all_passed(), "spec {i} invalid");
        let check = transformed_check(spec, &pair, &Initial::origin(spec), 10_000, 100 + i as u64).unwrap();
        worst_reconstruction = worst_reconstruction.max(check.max_relative_error);
        let lseq = l_sequence_auto(spec, &pair, 100_000).unwrap();
        if i == 0 {
            sys_a_l = lseq.last_norm();
        }
        worst_l = worst_l.max(lseq.last_norm());
    }
    let reconstruction_ok = worst_reconstruction <= 1e-8;
    let l_ok = worst_l < 1e-3;
    let ok = report(
        5,
        reconstruction_ok && l_ok,
        &format!(
            "max reconstruction error {worst_reconstruction:.2e} ({}); |L_K| at K=1e5 {sys_a_l:.4e} on SYS-A, {worst_l:.4e} worst, vs 1e-3 ({})",
            if reconstruction_ok { "ok" } else { "too large" },
            if l_ok { "ok" } else { "too large" }
        ),
        start.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}

#[test]
fn criterion_6_normality_of_scaled_iterates() {
    let _guard = lock();
    let start = Instant::now();
    let pair = harmonic_pair();
    let (replicas, steps) = (10_000, 100_000);
    let gaussian = sys_a(NoiseDistribution::Gaussian);
    let predicted = predict_full(&gaussian, pair.beta_bar).unwrap().sigma11;
    let check = |spec: &SystemSpec, seed: u64| {
        let result = run_ensemble(spec, &pair, replicas, steps, &[steps], seed).unwrap();
        let cp = result.last().unwrap();
        normality_check(&cp.theta_hat, cp.beta, &predicted).unwrap()
    };
    let mut passes = 0;
    for seed in 1..=10 {
        let r = check(&gaussian, seed);
        say(&format!(
            "  seed {seed}: ks {:.4} skew {:.4} ex-kurt {:.4} {}",
            r.ks_statistic,
            r.skewness[0],
            r.excess_kurtosis[0],
            if r.passed() { "pass" } else { "fail" }
        ));
        passes += usize::from(r.passed());
    }
    let rademacher = check(&sys_a(NoiseDistribution::ScaledRademacher), 11);
    say(&format!(
        "  rademacher: ks {:.4} skew {:.4} ex-kurt {:.4}",
        rademacher.ks_statistic, rademacher.skewness[0], rademacher.excess_kurtosis[0]
    ));
    let ok = report(
        6,
        passes >= 9 && rademacher.passed(),
        &format!("{passes}/10 Gaussian seeds pass; scaled-Rademacher {}", if rademacher.passed() { "passes" } else { "fails" }),
        start.elapsed(),
        Duration::from_secs(300),
    );
    assert!(ok);
}

#[test]
fn criterion_7_optimal_gain_dominates() {
    let _guard = lock();
    let start = Instant::now();
    let spec = sys_a(NoiseDistribution::Gaussian);
    let r = gain_report(&spec, &harmonic_pair(), 20, 4000, 100_000, 7).unwrap();
    let ok = report(
        7,
        r.dominance_passed() && r.simulation_passed() && (r.optimal[(0, 0)] - 2.0).abs() < 1e-12,
        &format!(
            "min eigenvalue of Sigma(G)-Sigma_opt {:.3e} (floor {DOMINANCE_TOLERANCE:e}); optimal-gain estimate {:.4} vs {:.4}, error/allowance {:.3}",
            r.min_dominance(),
            r.estimate[(0, 0)],
            r.optimal[(0, 0)],
            r.worst_ratio
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
    assert!(ok);
}

#[test]
fn criterion_8_gap_shrinks_with_step_ratio() {
    let _guard = lock();
    let start = Instant::now();
    let spec = sys_a(NoiseDistribution::Gaussian);
    let limit = predict_full(&spec, 0.0).unwrap().sigma11;
    let gaps: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            let pair = pair((eps, 10.0, 0.7), (1.0, 10.0, 0.7));
            assert!((pair.epsilon - eps).abs() < 1e-12);
            let cps = propagate_covariance(&spec, &pair, &Matrix::zeros(2, 2), 1_000_000, &[1_000_000]).unwrap();
            relative_frobenius(&cps.last().unwrap().sigma11, &limit)
        })
        .collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let ok = report(
        8,
        decreasing,
        &format!("gaps for eps 0.2, 0.1, 0.05: {gaps:.4?}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}
