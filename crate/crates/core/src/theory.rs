//! Closed-form asymptotic covariances of the two-time-scale iteration.
//!
//! With `epsilon = 0` the scaled covariances `beta_k^{-1} E[theta_hat theta_hat']`,
//! `beta_k^{-1} E[theta_hat r_hat']` and `gamma_k^{-1} E[r_hat r_hat']` converge to
//! the unique solution of
//!
//! ```text
//! Delta S11 + S11 Delta' - beta_bar S11 + A12 S21 + S12 A12' = G11
//! A12 S22 + S12 A22'                                          = G12
//! A22 S22 + S22 A22'                                          = G22
//! ```
//!
//! Eliminating `S12` and `S22` leaves a single Lyapunov equation for `S11`
//! whose right-hand side `Q` is the covariance of `V - A12 A22^{-1} W`.
//! [`predict_full`] and [`predict_reduced`] solve the two forms independently.
//!
//! # Gained slow iterations
//!
//! Multiplying the slow update by a gain `G1` is the same as replacing
//! `(A11, A12, b1, V)` by `(G1 A11, G1 A12, G1 b1, G1 V)`. The reduced matrix
//! becomes `G1 Delta` and the effective noise `G1 (V - A12 A22^{-1} W)`, so
//!
//! ```text
//! (G1 Delta) S + S (G1 Delta)' - beta_bar S = G1 Q G1'
//! ```
//!
//! With `beta_bar = 1` this is minimized in the PSD order by `G1 = Delta^{-1}`,
//! giving `Delta^{-1} Q Delta^{-T}`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{
    self, inverse_checked, is_hurwitz, solve_lyapunov, spectral_norm, symmetrize, Matrix,
    DEFAULT_HURWITZ_MARGIN,
};
use crate::model::{NoiseSpec, SystemSpec};
use crate::schedules::SchedulePair;

const MAX_CONDITION: f64 = 1e12;

/// Limits of the scaled covariance blocks together with the quantities used to build them.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePrediction {
    pub sigma11: Matrix,
    pub sigma12: Matrix,
    pub sigma22: Matrix,
    pub delta: Matrix,
    pub q: Matrix,
    pub beta_bar: f64,
}

impl CovariancePrediction {
    pub fn sigma21(&self) -> Matrix {
        self.sigma12.transpose()
    }

    pub fn joint(&self) -> Matrix {
        linalg::block2(&self.sigma11, &self.sigma12, &self.sigma21(), &self.sigma22)
    }

    /// Frobenius residuals of the three defining equations, in order
    /// (slow block, cross block, fast block).
    pub fn residuals(&self, spec: &SystemSpec) -> [f64; 3] {
        let n = spec.n();
        let g = &spec.noise;
        let slow = &self.delta * &self.sigma11 + &self.sigma11 * self.delta.transpose()
            - &self.sigma11 * self.beta_bar
            + &spec.a12 * self.sigma21()
            + &self.sigma12 * spec.a12.transpose()
            - &g.gamma11;
        let cross = &spec.a12 * &self.sigma22 + &self.sigma12 * spec.a22.transpose() - &g.gamma12;
        let fast = &spec.a22 * &self.sigma22 + &self.sigma22 * spec.a22.transpose() - &g.gamma22;
        debug_assert_eq!(slow.nrows(), n);
        [slow.norm(), cross.norm(), fast.norm()]
    }
}

fn shifted_delta(delta: &Matrix, beta_bar: f64) -> Matrix {
    let n = delta.nrows();
    delta - Matrix::identity(n, n) * (beta_bar / 2.0)
}

fn require_hurwitz(m: Matrix, label: &str) -> Result<()> {
    if is_hurwitz(&m, DEFAULT_HURWITZ_MARGIN)? {
        Ok(())
    } else {
        Err(Error::AssumptionViolation(format!("{label} is not Hurwitz")))
    }
}

/// Solves the coupled block equations in sequence: fast block, cross block, slow block.
pub fn predict_full(spec: &SystemSpec, beta_bar: f64) -> Result<CovariancePrediction> {
    require_hurwitz(-&spec.a22, "-A22")?;
    let delta = spec.delta();
    let shifted = shifted_delta(&delta, beta_bar);
    require_hurwitz(-&shifted, "-(Delta - beta_bar/2 I)")?;

    let g = &spec.noise;
    let sigma22 = solve_lyapunov(&spec.a22, &g.gamma22)?;
    // A12 S22 + S12 A22' = G12 is one-sided in S12
    let sigma12 = (&g.gamma12 - &spec.a12 * &sigma22) * spec.a22_inv().transpose();
    let rhs = &g.gamma11 - &spec.a12 * sigma12.transpose() - &sigma12 * spec.a12.transpose();
    let sigma11 = solve_lyapunov(&shifted, &symmetrize(&rhs))?;

    Ok(CovariancePrediction {
        sigma11,
        sigma12,
        sigma22,
        delta,
        q: noise_equivalent_covariance(spec),
        beta_bar,
    })
}

/// Slow-block covariance from the single reduced Lyapunov equation.
pub fn predict_reduced(spec: &SystemSpec, beta_bar: f64) -> Result<Matrix> {
    let shifted = shifted_delta(&spec.delta(), beta_bar);
    require_hurwitz(-&shifted, "-(Delta - beta_bar/2 I)")?;
    solve_lyapunov(&shifted, &noise_equivalent_covariance(spec))
}

/// Covariance of `V - A12 A22^{-1} W`.
pub fn noise_equivalent_covariance(spec: &SystemSpec) -> Matrix {
    let c = &spec.a12 * spec.a22_inv();
    let g = &spec.noise;
    let q = &g.gamma11 - &c * g.gamma21() - &g.gamma12 * c.transpose()
        + &c * &g.gamma22 * c.transpose();
    symmetrize(&q)
}

/// Best achievable slow covariance over all gains, and the gains attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalGain {
    /// `Delta^{-1} Q Delta^{-T}`.
    pub sigma11: Matrix,
    /// Optimal slow-only gain `Delta^{-1}`.
    pub slow_gain: Matrix,
    /// Optimal single-time-scale gain `A^{-1}` for the full block matrix.
    pub joint_gain: Matrix,
}

pub fn optimal_gain_covariance(spec: &SystemSpec) -> Result<OptimalGain> {
    let delta = spec.delta();
    let delta_inv = inverse_checked(&delta, MAX_CONDITION).ok_or(Error::SingularDelta)?;
    let joint_gain =
        inverse_checked(&spec.block_matrix(), MAX_CONDITION).ok_or(Error::SingularSystem)?;
    let q = noise_equivalent_covariance(spec);
    let sigma11 = symmetrize(&(&delta_inv * q * delta_inv.transpose()));
    Ok(OptimalGain {
        sigma11,
        slow_gain: delta_inv,
        joint_gain,
    })
}

/// Asymptotic slow covariance when the slow update is premultiplied by `gain`.
pub fn gained_reduced_covariance(spec: &SystemSpec, gain: &Matrix, beta_bar: f64) -> Result<Matrix> {
    let n = spec.n();
    if gain.nrows() != n || gain.ncols() != n {
        return Err(Error::Dimension(format!("slow gain must be {n}x{n}")));
    }
    let shifted = shifted_delta(&(gain * spec.delta()), beta_bar);
    require_hurwitz(-&shifted, "-(G1 Delta - beta_bar/2 I)")?;
    let q = noise_equivalent_covariance(spec);
    solve_lyapunov(&shifted, &symmetrize(&(gain * q * gain.transpose())))
}

/// Random slow gain `G1` with every eigenvalue of `G1 Delta` at real part
/// at least `beta_bar/2 + margin`, so the gained iteration stays stable.
pub fn random_stable_gain<R: Rng + ?Sized>(rng: &mut R, spec: &SystemSpec, beta_bar: f64, margin: f64) -> Result<Matrix> {
    let n = spec.n();
    let delta_inv = inverse_checked(&spec.delta(), MAX_CONDITION).ok_or(Error::SingularDelta)?;
    let raw = Matrix::from_fn(n, n, |_, _| StandardNormal.sample(rng)) / (n as f64).sqrt();
    let lowest = -linalg::spectral_abscissa(&-&raw)?;
    let extra: f64 = rng.random_range(0.0..2.0);
    let target = raw + Matrix::identity(n, n) * (beta_bar / 2.0 + margin - lowest + extra);
    Ok(target * delta_inv)
}

/// The ungained system equivalent to premultiplying the slow update by `gain`.
pub fn gained_system(spec: &SystemSpec, gain: &Matrix) -> Result<SystemSpec> {
    let n = spec.n();
    if gain.nrows() != n || gain.ncols() != n {
        return Err(Error::Dimension(format!("slow gain must be {n}x{n}")));
    }
    let g = &spec.noise;
    let noise = NoiseSpec::new(
        symmetrize(&(gain * &g.gamma11 * gain.transpose())),
        gain * &g.gamma12,
        g.gamma22.clone(),
        g.distribution,
    );
    SystemSpec::new(
        gain * &spec.a11,
        gain * &spec.a12,
        spec.a21.clone(),
        spec.a22.clone(),
        gain * &spec.b1,
        spec.b2.clone(),
        noise,
    )
}

/// The decoupling sequence `L_k` (`m x n`), zero up to `k0` and then
///
/// ```text
/// L_{k+1} = (L_k - gamma_k A22 L_k + beta_k A22^{-1} A21 B_k) (I - beta_k B_k)^{-1},
/// B_k     = Delta - A12 L_k,
/// ```
///
/// which removes the slow variable from the transformed fast recursion.
#[derive(Debug, Clone)]
pub struct LSequence {
    pub k0: u64,
    /// `values[i] = L_{k0 + i}`.
    pub values: Vec<Matrix>,
    /// Induced 2-norms of `values`.
    pub norms: Vec<f64>,
}

impl LSequence {
    pub fn last_index(&self) -> u64 {
        self.k0 + self.values.len() as u64 - 1
    }

    /// `L_k`; zero before `k0`.
    pub fn at(&self, k: u64) -> Matrix {
        if k < self.k0 {
            let z = &self.values[0];
            return Matrix::zeros(z.nrows(), z.ncols());
        }
        self.values[(k - self.k0) as usize].clone()
    }

    pub(crate) fn get(&self, k: u64) -> &Matrix {
        &self.values[(k - self.k0) as usize]
    }

    pub fn norm_at(&self, k: u64) -> f64 {
        if k < self.k0 {
            0.0
        } else {
            self.norms[(k - self.k0) as usize]
        }
    }

    pub fn last_norm(&self) -> f64 {
        *self.norms.last().expect("sequence is never empty")
    }

    /// Largest norm over `lo..=hi` (clamped to the stored range).
    pub fn max_norm(&self, lo: u64, hi: u64) -> f64 {
        let lo = lo.max(self.k0);
        let hi = hi.min(self.last_index());
        if lo > hi {
            return 0.0;
        }
        self.norms[(lo - self.k0) as usize..=(hi - self.k0) as usize]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Residual of the defining recursion at step `k`, `k0 <= k < last_index()`.
    pub fn recursion_residual(&self, spec: &SystemSpec, pair: &SchedulePair, k: u64) -> f64 {
        let (beta, gamma) = (pair.beta(k), pair.gamma(k));
        let l = self.get(k);
        let next = self.get(k + 1);
        let n = spec.n();
        let b = spec.delta() - &spec.a12 * l;
        let lhs = next * (Matrix::identity(n, n) - &b * beta);
        let rhs = l - &spec.a22 * l * gamma + spec.fast_gain() * &b * beta;
        (lhs - rhs).norm()
    }
}

/// Runs the decoupling recursion from `k0` (where `L_{k0} = 0`) to `last`.
pub fn l_sequence(spec: &SystemSpec, pair: &SchedulePair, k0: u64, last: u64) -> Result<LSequence> {
    if last < k0 {
        return Err(Error::InvalidArgument(format!("last index {last} precedes k0 = {k0}")));
    }
    let (n, m) = (spec.n(), spec.m());
    let delta = spec.delta();
    let fast_gain = spec.fast_gain();
    let eye = Matrix::identity(n, n);

    let len = (last - k0 + 1) as usize;
    let mut values = Vec::with_capacity(len);
    let mut norms = Vec::with_capacity(len);
    let mut l = Matrix::zeros(m, n);
    values.push(l.clone());
    norms.push(0.0);
    for k in k0..last {
        let (beta, gamma) = (pair.beta(k), pair.gamma(k));
        let b = &delta - &spec.a12 * &l;
        let step = &eye - &b * beta;
        let inv = inverse_checked(&step, MAX_CONDITION).ok_or(Error::SingularStep { k })?;
        let numer = &l - &spec.a22 * &l * gamma + &fast_gain * &b * beta;
        l = numer * inv;
        if !l.iter().all(|x| x.is_finite()) {
            return Err(Error::SingularStep { k });
        }
        norms.push(spectral_norm(&l));
        values.push(l.clone());
    }
    Ok(LSequence { k0, values, norms })
}

/// Largest start index tried by [`l_sequence_auto`].
pub const MAX_AUTO_K0: u64 = 1 << 10;

/// Tries `k0 = 0, 1, 2, 4, ..., 1024` until the recursion is well defined.
pub fn l_sequence_auto(spec: &SystemSpec, pair: &SchedulePair, last: u64) -> Result<LSequence> {
    let mut k0 = 0;
    loop {
        match l_sequence(spec, pair, k0.min(last), last) {
            Err(Error::SingularStep { .. }) if k0 < MAX_AUTO_K0 => {
                k0 = if k0 == 0 { 1 } else { k0 * 2 };
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{averaging_system, NoiseDistribution};
    use crate::schedules::StepSchedule;
    use crate::linalg::Vector;

    fn pair(beta: (f64, f64, f64), gamma: (f64, f64, f64)) -> SchedulePair {
        SchedulePair::new(
            StepSchedule::new(beta.0, beta.1, beta.2).unwrap(),
            StepSchedule::new(gamma.0, gamma.1, gamma.2).unwrap(),
        )
        .unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn full_prediction_scalar() {
        let p = predict_full(&sys_a(), 0.0).unwrap();
        assert!(close(p.sigma22[(0, 0)], 0.5));
        assert!(close(p.sigma12[(0, 0)], -0.5));
        assert!(close(p.sigma11[(0, 0)], 1.0));
        assert!(close(p.q[(0, 0)], 2.0));

        let p = predict_full(&sys_a(), 1.0).unwrap();
        assert!(close(p.sigma11[(0, 0)], 2.0));
        assert!(close(p.sigma22[(0, 0)], 0.5));

        let p = predict_full(&sys_a(), 0.1).unwrap();
        assert!(close(p.sigma11[(0, 0)], 2.0 / 1.9));
        let r = p.residuals(&sys_a());
        assert!(r.iter().all(|&x| x < 1e-12), "{r:?}");
    }

    #[test]
    fn full_prediction_decoupled() {
        let spec = SystemSpec::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 2.0]),
            Matrix::zeros(2, 1),
            Matrix::zeros(1, 2),
            s(3.0),
            Vector::zeros(2),
            v(0.0),
            NoiseSpec::new(
                Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
                Matrix::zeros(2, 1),
                s(2.0),
                NoiseDistribution::Gaussian,
            ),
        )
        .unwrap();
        let p = predict_full(&spec, 0.0).unwrap();
        assert!(p.sigma12.norm() < 1e-14);
        let slow = solve_lyapunov(&spec.a11, &spec.noise.gamma11).unwrap();
        assert!((&p.sigma11 - slow).norm() < 1e-12);
    }

    #[test]
    fn full_prediction_rejects_unstable() {
        let mut spec = sys_a();
        spec.a11 = s(0.5); // Delta = -0.5
        let spec = spec.with_noise(spec.noise.clone()).unwrap();
        assert!(matches!(predict_full(&spec, 0.0), Err(Error::AssumptionViolation(_))));
        assert!(matches!(predict_full(&sys_a(), 3.0), Err(Error::AssumptionViolation(_))));
    }

    #[test]
    fn reduced_examples() {
        assert!(close(predict_reduced(&sys_a(), 0.0).unwrap()[(0, 0)], 1.0));
        assert!(close(predict_reduced(&sys_a(), 0.1).unwrap()[(0, 0)], 2.0 / 1.9));

        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let g = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let spec = averaging_system(&a, &Vector::zeros(2), &g).unwrap();
        let a_inv = a.clone().try_inverse().unwrap();
        let expected = &a_inv * &g * a_inv.transpose();
        let got = predict_reduced(&spec, 1.0).unwrap();
        assert!((got - expected).norm() < 1e-12);

        let quiet = sys_a().with_noise(NoiseSpec::zero(1, 1)).unwrap();
        assert_eq!(predict_reduced(&quiet, 0.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn noise_equivalent_examples() {
        assert!(close(noise_equivalent_covariance(&sys_a())[(0, 0)], 2.0));

        let mut spec = sys_a();
        spec.a12 = s(0.0);
        assert_eq!(noise_equivalent_covariance(&spec), spec.noise.gamma11);

        // V = C W exactly with C = A12 A22^{-1}
        let a12 = Matrix::from_row_slice(2, 3, &[0.4, -1.0, 0.2, 1.5, 0.3, -0.7]);
        let a22 = Matrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, -0.3, 1.5, 0.2, 0.1, 0.0, 3.0]);
        let c = &a12 * a22.clone().try_inverse().unwrap();
        let w = Matrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, -0.4, 0.0, -0.4, 0.7]);
        let spec = SystemSpec::new(
            Matrix::identity(2, 2) * 3.0,
            a12,
            Matrix::from_row_slice(3, 2, &[0.1, 0.0, 0.0, 0.2, 0.3, 0.1]),
            a22,
            Vector::zeros(2),
            Vector::zeros(3),
            NoiseSpec::new(&c * &w * c.transpose(), &c * &w, w.clone(), NoiseDistribution::Gaussian),
        )
        .unwrap();
        assert!(noise_equivalent_covariance(&spec).norm() < 1e-12);
    }

    #[test]
    fn optimal_gain_examples() {
        let opt = optimal_gain_covariance(&sys_a()).unwrap();
        assert!(close(opt.sigma11[(0, 0)], 2.0));
        assert!(close(opt.slow_gain[(0, 0)], 1.0));
        let a_inv = sys_a().block_matrix().try_inverse().unwrap();
        assert!((&opt.joint_gain - a_inv).norm() < 1e-12);

        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let spec = averaging_system(&a, &Vector::zeros(2), &Matrix::identity(2, 2)).unwrap();
        let a_inv = a.try_inverse().unwrap();
        let opt = optimal_gain_covariance(&spec).unwrap();
        assert!((opt.sigma11 - &a_inv * a_inv.transpose()).norm() < 1e-12);

        let quiet = sys_a().with_noise(NoiseSpec::zero(1, 1)).unwrap();
        assert_eq!(optimal_gain_covariance(&quiet).unwrap().sigma11.norm(), 0.0);
    }

    #[test]
    fn gained_equation_scalar() {
        // g^2 Q / (2 g - 1) with Q = 2, beta_bar = 1
        for g in [0.6, 1.0, 1.7, 3.0] {
            let got = gained_reduced_covariance(&sys_a(), &s(g), 1.0).unwrap()[(0, 0)];
            assert!(close(got, g * g * 2.0 / (2.0 * g - 1.0)), "{g}: {got}");
        }
        assert!(gained_reduced_covariance(&sys_a(), &s(0.4), 1.0).is_err());
    }

    #[test]
    fn gained_system_matches_gained_equation() {
        let g = s(1.7);
        let sys = gained_system(&sys_a(), &g).unwrap();
        let via_system = predict_reduced(&sys, 1.0).unwrap();
        let direct = gained_reduced_covariance(&sys_a(), &g, 1.0).unwrap();
        assert!((via_system - direct).norm() < 1e-12);
    }

    #[test]
    fn l_sequence_zero_when_decoupled() {
        let mut spec = sys_a();
        spec.a21 = s(0.0);
        let spec = spec.with_noise(spec.noise.clone()).unwrap();
        let seq = l_sequence(&spec, &pair((0.1, 10.0, 1.0), (0.5, 10.0, 0.7)), 0, 1000).unwrap();
        assert!(seq.norms.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn l_sequence_recursion_holds() {
        let p = pair((0.1, 10.0, 1.0), (0.5, 10.0, 0.7));
        let seq = l_sequence(&sys_a(), &p, 0, 2000).unwrap();
        assert_eq!(seq.values[0].norm(), 0.0);
        for k in (0..2000).step_by(97) {
            let r = seq.recursion_residual(&sys_a(), &p, k);
            assert!(r <= 1e-12, "step {k}: {r}");
        }
    }

    #[test]
    fn l_sequence_singular_start_and_retry() {
        // beta_0 * Delta = 1 makes I - beta_0 B_0 singular
        let p = pair((1.0, 10.0, 1.0), (1.0, 10.0, 0.7));
        assert_eq!(
            l_sequence(&sys_a(), &p, 0, 100).unwrap_err(),
            Error::SingularStep { k: 0 }
        );
        let seq = l_sequence_auto(&sys_a(), &p, 100).unwrap();
        assert_eq!(seq.k0, 1);
        assert_eq!(seq.at(0).norm(), 0.0);
    }

    #[test]
    fn l_sequence_decays() {
        let p = pair((0.1, 10.0, 1.0), (0.5, 10.0, 0.7));
        let last = 100_000;
        let seq = l_sequence(&sys_a(), &p, 0, last).unwrap();
        assert!(seq.max_norm(last / 2, last) < seq.max_norm(0, last / 2));
        // asymptotically |L_k| ~ (beta_k / gamma_k) |A22^{-1} A21 Delta| = beta_k / gamma_k here
        let ratio = p.beta(last) / p.gamma(last);
        assert!((seq.last_norm() / ratio - 1.0).abs() < 0.05, "{} vs {ratio}", seq.last_norm());
    }

    #[test]
    fn random_gains_are_dominated_by_the_optimum() {
        let spec = sys_a();
        let opt = optimal_gain_covariance(&spec).unwrap();
        assert!((opt.sigma11[(0, 0)] - 2.0).abs() < 1e-12);
        let mut rng = crate::engine::CounterRng::new(4, 0);
        for _ in 0..50 {
            let g = random_stable_gain(&mut rng, &spec, 1.0, 0.05).unwrap();
            let s = gained_reduced_covariance(&spec, &g, 1.0).unwrap();
            assert!(s[(0, 0)] - opt.sigma11[(0, 0)] >= -1e-8);
        }
    }
}
