//! The coupled linear system
//!
//! ```text
//! theta_{k+1} = theta_k + beta_k  (b1 - A11 theta_k - A12 r_k + V_k)
//! r_{k+1}     = r_k     + gamma_k (b2 - A21 theta_k - A22 r_k + W_k)
//! ```
//!
//! with `theta` in R^n, `r` in R^m and i.i.d. zero-mean noise `(V_k, W_k)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, block2, condition_number, is_psd, min_symmetric_eigenvalue, spectral_abscissa, symmetrize, Matrix,
    Vector, DEFAULT_HURWITZ_MARGIN,
};
use crate::report::ValidationReport;
use crate::schedules::SchedulePair;

/// Largest admissible condition number of `A22`.
pub const MAX_A22_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDistribution {
    /// Standard normal draws mapped through the covariance factor.
    #[default]
    Gaussian,
    /// Independent +-1 coordinates mapped through the covariance factor.
    ScaledRademacher,
}

/// Joint covariance of `(V_k, W_k)` and how to sample it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub gamma11: Matrix,
    pub gamma12: Matrix,
    pub gamma22: Matrix,
    pub distribution: NoiseDistribution,
}

impl NoiseSpec {
    pub fn new(gamma11: Matrix, gamma12: Matrix, gamma22: Matrix, distribution: NoiseDistribution) -> Self {
        Self {
            gamma11,
            gamma12,
            gamma22,
            distribution,
        }
    }

    /// Zero noise of the given dimensions.
    pub fn zero(n: usize, m: usize) -> Self {
        Self::new(
            Matrix::zeros(n, n),
            Matrix::zeros(n, m),
            Matrix::zeros(m, m),
            NoiseDistribution::Gaussian,
        )
    }

    pub fn gamma21(&self) -> Matrix {
        self.gamma12.transpose()
    }

    /// `[[G11, G12], [G21, G22]]`.
    pub fn joint(&self) -> Matrix {
        block2(&self.gamma11, &self.gamma12, &self.gamma12.transpose(), &self.gamma22)
    }

    pub fn is_zero(&self) -> bool {
        self.gamma11.iter().chain(self.gamma12.iter()).chain(self.gamma22.iter()).all(|&x| x == 0.0)
    }
}

/// Matrices, offsets and noise of the coupled iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    n: usize,
    m: usize,
    pub a11: Matrix,
    pub a12: Matrix,
    pub a21: Matrix,
    pub a22: Matrix,
    pub b1: Vector,
    pub b2: Vector,
    pub noise: NoiseSpec,
    a22_inv: Matrix,
}

impl SystemSpec {
    /// Checks dimensions and finiteness, and requires `A22` to be invertible
    /// with condition number at most [`MAX_A22_CONDITION`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a11: Matrix,
        a12: Matrix,
        a21: Matrix,
        a22: Matrix,
        b1: Vector,
        b2: Vector,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let n = a11.nrows();
        let m = a22.nrows();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("n and m must be positive".into()));
        }
        let shape = |name: &str, mat: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if mat.nrows() != rows || mat.ncols() != cols {
                Err(Error::Dimension(format!(
                    "{name} must be {rows}x{cols}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else {
                Ok(())
            }
        };
        shape("A11", &a11, n, n)?;
        shape("A12", &a12, n, m)?;
        shape("A21", &a21, m, n)?;
        shape("A22", &a22, m, m)?;
        shape("Gamma11", &noise.gamma11, n, n)?;
        shape("Gamma12", &noise.gamma12, n, m)?;
        shape("Gamma22", &noise.gamma22, m, m)?;
        if b1.len() != n || b2.len() != m {
            return Err(Error::Dimension(format!(
                "b1 and b2 must have lengths {n} and {m}, got {} and {}",
                b1.len(),
                b2.len()
            )));
        }
        let finite = [&a11, &a12, &a21, &a22, &noise.gamma11, &noise.gamma12, &noise.gamma22]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
            && b1.iter().chain(b2.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite);
        }

        let condition = condition_number(&a22);
        if condition > MAX_A22_CONDITION {
            return Err(Error::SingularA22 { condition });
        }
        let a22_inv = a22
            .clone()
            .try_inverse()
            .ok_or(Error::SingularA22 { condition })?;

        Ok(Self {
            n,
            m,
            a11,
            a12,
            a21,
            a22,
            b1,
            b2,
            noise,
            a22_inv,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn a22_inv(&self) -> &Matrix {
        &self.a22_inv
    }

    /// `A22^{-1} A21`, the map from `theta` to the equilibrium offset of `r`.
    pub fn fast_gain(&self) -> Matrix {
        &self.a22_inv * &self.a21
    }

    /// Full block matrix `[[A11, A12], [A21, A22]]`.
    pub fn block_matrix(&self) -> Matrix {
        block2(&self.a11, &self.a12, &self.a21, &self.a22)
    }

    pub fn block_offset(&self) -> Vector {
        let mut b = Vector::zeros(self.dim());
        b.rows_mut(0, self.n).copy_from(&self.b1);
        b.rows_mut(self.n, self.m).copy_from(&self.b2);
        b
    }

    /// Same system with different noise.
    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        Self::new(
            self.a11.clone(),
            self.a12.clone(),
            self.a21.clone(),
            self.a22.clone(),
            self.b1.clone(),
            self.b2.clone(),
            noise,
        )
    }

    /// `Delta = A11 - A12 A22^{-1} A21`.
    pub fn delta(&self) -> Matrix {
        &self.a11 - &self.a12 * self.fast_gain()
    }
}

/// Unique solution of `A11 theta + A12 r = b1`, `A21 theta + A22 r = b2`.
pub fn fixed_point(spec: &SystemSpec) -> Result<(Vector, Vector)> {
    let a = spec.block_matrix();
    if condition_number(&a) > 1e12 {
        return Err(Error::SingularSystem);
    }
    let b = spec.block_offset();
    let z = a.lu().solve(&b).ok_or(Error::SingularSystem)?;
    Ok((z.rows(0, spec.n()).into_owned(), z.rows(spec.n(), spec.m()).into_owned()))
}

pub fn delta_matrix(spec: &SystemSpec) -> Matrix {
    spec.delta()
}

/// Coordinates centered at the fixed point, with `r` measured from its
/// `theta`-dependent equilibrium:
///
/// ```text
/// theta_hat = theta - theta*
/// r_hat     = r - A22^{-1} (b2 - A21 theta)
/// ```
#[derive(Debug, Clone)]
pub struct HatCoordinates {
    pub theta_star: Vector,
    pub r_star: Vector,
    a22_inv_b2: Vector,
    fast_gain: Matrix,
}

impl HatCoordinates {
    pub fn new(spec: &SystemSpec) -> Result<Self> {
        let (theta_star, r_star) = fixed_point(spec)?;
        Ok(Self {
            theta_star,
            r_star,
            a22_inv_b2: spec.a22_inv() * &spec.b2,
            fast_gain: spec.fast_gain(),
        })
    }

    pub fn apply(&self, theta: &Vector, r: &Vector) -> (Vector, Vector) {
        let theta_hat = theta - &self.theta_star;
        let r_hat = r - &self.a22_inv_b2 + &self.fast_gain * theta;
        (theta_hat, r_hat)
    }

    /// Inverse of [`HatCoordinates::apply`].
    pub fn invert(&self, theta_hat: &Vector, r_hat: &Vector) -> (Vector, Vector) {
        let theta = theta_hat + &self.theta_star;
        let r = r_hat + &self.a22_inv_b2 - &self.fast_gain * &theta;
        (theta, r)
    }

    /// Writes the hat coordinates of a flat `[theta; r]` state into `out`.
    pub(crate) fn apply_flat(&self, n: usize, z: &[f64], out: &mut [f64]) {
        let m = self.a22_inv_b2.len();
        for i in 0..n {
            out[i] = z[i] - self.theta_star[i];
        }
        for i in 0..m {
            let mut acc = z[n + i] - self.a22_inv_b2[i];
            for j in 0..n {
                acc += self.fast_gain[(i, j)] * z[j];
            }
            out[n + i] = acc;
        }
    }
}

pub fn hat_transform(spec: &SystemSpec, theta: &Vector, r: &Vector) -> Result<(Vector, Vector)> {
    Ok(HatCoordinates::new(spec)?.apply(theta, r))
}

/// Checks the structural assumptions of the system against a schedule pair.
/// Failures are reported, not raised.
pub fn validate_system(spec: &SystemSpec, pair: &SchedulePair) -> ValidationReport {
    let mut report = ValidationReport::new();
    let margin = DEFAULT_HURWITZ_MARGIN;

    let joint = spec.noise.joint();
    let min_eig = min_symmetric_eigenvalue(&joint).unwrap_or(f64::NAN);
    report.push(
        "noise-psd",
        "joint noise covariance is symmetric positive semidefinite",
        is_psd(&joint).unwrap_or(false),
        min_eig,
        -1e-10 * (1.0 + joint.norm()),
    );

    let cond = condition_number(&spec.a22);
    report.push(
        "a22-invertible",
        "A22 is invertible",
        cond <= MAX_A22_CONDITION,
        cond,
        MAX_A22_CONDITION,
    );

    let mut hurwitz = |id: &'static str, desc: &str, m: Matrix| {
        let abscissa = spectral_abscissa(&m).unwrap_or(f64::NAN);
        report.push(id, desc, abscissa < -margin, abscissa, -margin);
    };
    hurwitz("fast-hurwitz", "-A22 is Hurwitz", -&spec.a22);
    let delta = spec.delta();
    hurwitz("reduced-hurwitz", "-Delta is Hurwitz", -&delta);
    let n = spec.n();
    let shifted = -(&delta - Matrix::identity(n, n) * (pair.beta_bar / 2.0));
    hurwitz(
        "shifted-reduced-hurwitz",
        "-(Delta - beta_bar/2 I) is Hurwitz",
        shifted,
    );

    report.merge(pair.validate());
    report
}

/// Builds the two-time-scale system whose slow iterate is the running average
/// of the Robbins-Monro iterate `r_{k+1} = r_k + gamma_k (b - A r_k + W_k)`.
///
/// With `beta_k = 1/(k+1)` the slow recursion `theta_{k+1} = theta_k +
/// beta_k (r_k - theta_k)` keeps `theta_k` equal to the average of
/// `r_0, ..., r_{k-1}`. Matching the fast recursion term by term requires
/// `A22 = A` and `A21 = 0`.
pub fn averaging_system(a: &Matrix, b: &Vector, gamma: &Matrix) -> Result<SystemSpec> {
    let d = a.nrows();
    if a.ncols() != d || b.len() != d || gamma.nrows() != d || gamma.ncols() != d {
        return Err(Error::Dimension(format!(
            "averaging system needs square A, matching b and Gamma (A is {}x{})",
            a.nrows(),
            a.ncols()
        )));
    }
    if !linalg::is_hurwitz(&-a, DEFAULT_HURWITZ_MARGIN)? {
        return Err(Error::NotHurwitz("-A".into()));
    }
    let noise = NoiseSpec::new(
        Matrix::zeros(d, d),
        Matrix::zeros(d, d),
        gamma.clone(),
        NoiseDistribution::Gaussian,
    );
    SystemSpec::new(
        Matrix::identity(d, d),
        -Matrix::identity(d, d),
        Matrix::zeros(d, d),
        a.clone(),
        Vector::zeros(d),
        b.clone(),
        noise,
    )
}

/// Draws a random system satisfying the structural assumptions for `beta_bar`:
/// `-A22` and `-(Delta - beta_bar/2 I)` are Hurwitz with margin at least
/// `margin`, and the joint noise covariance is a random Gram matrix.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize, beta_bar: f64, margin: f64) -> Result<SystemSpec> {
    let normal = |rng: &mut R, r: usize, c: usize| Matrix::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    // shift a random matrix so every eigenvalue has real part >= floor
    let shifted = |rng: &mut R, d: usize, floor: f64| -> Result<Matrix> {
        let raw = normal(rng, d, d) / (d as f64).sqrt();
        let lowest = -spectral_abscissa(&-&raw)?;
        let extra: f64 = rng.random_range(0.0..1.0);
        Ok(raw + Matrix::identity(d, d) * (floor - lowest + extra))
    };
    let a22 = shifted(rng, m, margin)?;
    let delta = shifted(rng, n, beta_bar / 2.0 + margin)?;
    let a12 = normal(rng, n, m) / (m as f64).sqrt();
    let a21 = normal(rng, m, n) / (n as f64).sqrt();
    let a22_inv = a22.clone().try_inverse().ok_or(Error::SingularA22 { condition: f64::INFINITY })?;
    let a11 = &delta + &a12 * &a22_inv * &a21;
    let factor = normal(rng, n + m, n + m) / ((n + m) as f64).sqrt();
    let joint = symmetrize(&(&factor * factor.transpose()));
    let noise = NoiseSpec::new(
        joint.view((0, 0), (n, n)).into_owned(),
        joint.view((0, n), (n, m)).into_owned(),
        joint.view((n, n), (m, m)).into_owned(),
        NoiseDistribution::Gaussian,
    );
    SystemSpec::new(a11, a12, a21, a22, normal(rng, n, 1).column(0).into_owned(), normal(rng, m, 1).column(0).into_owned(), noise)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::schedules::StepSchedule;
    use proptest::prelude::*;

    fn pair(beta: (f64, f64, f64), gamma: (f64, f64, f64)) -> SchedulePair {
        SchedulePair::new(
            StepSchedule::new(beta.0, beta.1, beta.2).unwrap(),
            StepSchedule::new(gamma.0, gamma.1, gamma.2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn fixed_point_examples() {
        let (t, r) = fixed_point(&sys_a()).unwrap();
        assert!((t[0] + 1.0).abs() < 1e-12);
        assert!((r[0] - 3.0).abs() < 1e-12);

        let mut spec = sys_a();
        spec.b1 = v(0.0);
        spec.b2 = v(0.0);
        let (t, r) = fixed_point(&spec).unwrap();
        assert_eq!((t[0], r[0]), (0.0, 0.0));

        let id = SystemSpec::new(
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
            Matrix::zeros(1, 2),
            s(1.0),
            Vector::from_vec(vec![0.3, -2.0]),
            v(5.0),
            NoiseSpec::zero(2, 1),
        )
        .unwrap();
        let (t, r) = fixed_point(&id).unwrap();
        assert!((t - id.b1.clone()).norm() < 1e-14);
        assert!((r[0] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn fixed_point_singular_system() {
        // A11 = A12 A22^{-1} A21 makes Delta and the block matrix singular
        let spec = SystemSpec::new(s(1.0), s(1.0), s(1.0), s(1.0), v(0.0), v(0.0), NoiseSpec::zero(1, 1))
            .unwrap();
        assert_eq!(fixed_point(&spec), Err(Error::SingularSystem));
    }

    #[test]
    fn singular_a22_rejected() {
        let err = SystemSpec::new(s(1.0), s(1.0), s(1.0), s(0.0), v(0.0), v(0.0), NoiseSpec::zero(1, 1))
            .unwrap_err();
        assert!(matches!(err, Error::SingularA22 { .. }));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = SystemSpec::new(
            s(1.0),
            Matrix::zeros(1, 2),
            s(1.0),
            s(1.0),
            v(0.0),
            v(0.0),
            NoiseSpec::zero(1, 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn delta_examples() {
        assert!((delta_matrix(&sys_a())[(0, 0)] - 1.0).abs() < 1e-14);
        let mut spec = sys_a();
        spec.a12 = s(0.0);
        assert_eq!(delta_matrix(&spec), spec.a11);
        let avg = averaging_system(&s(3.0), &v(1.0), &s(1.0)).unwrap();
        assert_eq!(delta_matrix(&avg), s(1.0));
    }

    #[test]
    fn validate_examples() {
        let ok = validate_system(&sys_a(), &pair((0.5, 10.0, 0.9), (0.5, 10.0, 0.7)));
        assert_eq!(pair((0.5, 10.0, 0.9), (0.5, 10.0, 0.7)).beta_bar, 0.0);
        assert!(ok.all_passed(), "{ok}");

        // beta_bar = 1/(tau * base) = 3
        let p = pair((1.0 / 3.0, 1.0, 1.0), (1.0, 1.0, 0.7));
        assert!((p.beta_bar - 3.0).abs() < 1e-12);
        let bad = validate_system(&sys_a(), &p);
        let c = bad.get("shifted-reduced-hurwitz").unwrap();
        assert!(!c.passed);
        assert!((c.measured - 0.5).abs() < 1e-12);
        assert!(bad.get("reduced-hurwitz").unwrap().passed);

        let rot = SystemSpec::new(
            s(1.0),
            Matrix::zeros(1, 2),
            Matrix::zeros(2, 1),
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            v(0.0),
            Vector::zeros(2),
            NoiseSpec::zero(1, 2),
        )
        .unwrap();
        let r = validate_system(&rot, &pair((1.0, 1.0, 1.0), (1.0, 1.0, 0.7)));
        assert!(!r.get("fast-hurwitz").unwrap().passed);
    }

    #[test]
    fn validate_flags_indefinite_noise() {
        let spec = sys_a()
            .with_noise(NoiseSpec::new(s(1.0), s(2.0), s(1.0), NoiseDistribution::Gaussian))
            .unwrap();
        let r = validate_system(&spec, &pair((1.0, 10.0, 1.0), (1.0, 10.0, 0.7)));
        assert!(!r.get("noise-psd").unwrap().passed);
    }

    #[test]
    fn averaging_examples() {
        let spec = averaging_system(&s(1.0), &v(0.0), &s(1.0)).unwrap();
        let (t, r) = fixed_point(&spec).unwrap();
        assert_eq!((t[0], r[0]), (0.0, 0.0));
        assert_eq!(spec.noise.gamma11, s(0.0));
        assert_eq!(spec.noise.gamma12, s(0.0));

        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let spec = averaging_system(&Matrix::identity(2, 2), &e1, &Matrix::identity(2, 2)).unwrap();
        let (t, r) = fixed_point(&spec).unwrap();
        assert!((t - &e1).norm() < 1e-14 && (r - &e1).norm() < 1e-14);

        assert!(matches!(
            averaging_system(&s(-1.0), &v(0.0), &s(1.0)),
            Err(Error::NotHurwitz(_))
        ));
    }

    #[test]
    fn hat_examples() {
        let spec = sys_a();
        let hats = HatCoordinates::new(&spec).unwrap();
        let (th, rh) = hats.apply(&hats.theta_star, &hats.r_star);
        assert!(th.norm() < 1e-12 && rh.norm() < 1e-12);

        let (th, rh) = hat_transform(&spec, &v(0.0), &v(0.0)).unwrap();
        assert!((th[0] - 1.0).abs() < 1e-12);
        assert!((rh[0] + 2.0).abs() < 1e-12);

        let mut dec = sys_a();
        dec.a21 = s(0.0);
        let dec = dec.with_noise(dec.noise.clone()).unwrap();
        let (_, r1) = hat_transform(&dec, &v(0.0), &v(4.0)).unwrap();
        let (_, r2) = hat_transform(&dec, &v(-7.0), &v(4.0)).unwrap();
        assert_eq!(r1, r2);
    }

    fn arb_hurwitz_negated(d: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-1.0f64..1.0, d * d)
            .prop_map(move |v| Matrix::from_row_slice(d, d, &v) + Matrix::identity(d, d) * (d as f64 + 0.2))
    }

    #[test]
    fn random_systems_satisfy_assumptions() {
        use crate::engine::CounterRng;
        use crate::schedules::ScheduleParams;
        let mut rng = CounterRng::new(99, 0);
        for (i, beta_bar) in [0.0, 0.5, 1.0].iter().cycle().take(60).enumerate() {
            let (n, m) = (1 + i % 6, 1 + (i / 6) % 6);
            let spec = random_system(&mut rng, n, m, *beta_bar, 0.1).unwrap();
            let slow = if *beta_bar == 0.0 {
                ScheduleParams::new(1.0, 1.0, 0.9)
            } else {
                ScheduleParams::new(1.0, 1.0 / beta_bar, 1.0)
            };
            let pair = SchedulePair::from_params(slow, ScheduleParams::new(1.0, 1.0, 0.6)).unwrap();
            assert!((pair.beta_bar - beta_bar).abs() < 1e-12);
            let report = validate_system(&spec, &pair);
            assert!(report.all_passed(), "{report}");
        }
    }

    proptest! {
        #[test]
        fn averaging_invariants(
            (a, b) in (1usize..=4).prop_flat_map(|d| (arb_hurwitz_negated(d), proptest::collection::vec(-3.0f64..3.0, d)))
        ) {
            let d = a.nrows();
            let b = Vector::from_vec(b);
            let spec = averaging_system(&a, &b, &Matrix::identity(d, d)).unwrap();
            prop_assert!((spec.delta() - Matrix::identity(d, d)).norm() < 1e-12);
            let (t, r) = fixed_point(&spec).unwrap();
            let sol = a.clone().lu().solve(&b).unwrap();
            prop_assert!((&t - &sol).norm() <= 1e-10 * (1.0 + sol.norm()));
            prop_assert!((&r - &sol).norm() <= 1e-10 * (1.0 + sol.norm()));
            let p = pair((1.0, 1.0, 1.0), (1.0, 1.0, 0.7));
            let rep = validate_system(&spec, &p);
            prop_assert!(rep.all_passed(), "{}", rep);
            prop_assert!((rep.get("shifted-reduced-hurwitz").unwrap().measured + 0.5).abs() < 1e-9);
        }

        #[test]
        fn hat_of_fixed_point_vanishes(
            vals in proptest::collection::vec(-1.0f64..1.0, 16),
            b in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let a11 = Matrix::from_row_slice(2, 2, &vals[0..4]) + Matrix::identity(2, 2) * 4.0;
            let a12 = Matrix::from_row_slice(2, 2, &vals[4..8]);
            let a21 = Matrix::from_row_slice(2, 2, &vals[8..12]);
            let a22 = Matrix::from_row_slice(2, 2, &vals[12..16]) + Matrix::identity(2, 2) * 3.0;
            let spec = SystemSpec::new(a11, a12, a21, a22,
                Vector::from_vec(b[0..2].to_vec()), Vector::from_vec(b[2..4].to_vec()),
                NoiseSpec::zero(2, 2)).unwrap();
            let hats = HatCoordinates::new(&spec).unwrap();
            let (th, rh) = hats.apply(&hats.theta_star, &hats.r_star);
            prop_assert!(th.norm() <= 1e-10 && rh.norm() <= 1e-10);
            let (t2, r2) = hats.invert(&th, &rh);
            prop_assert!((t2 - &hats.theta_star).norm() <= 1e-10);
            prop_assert!((r2 - &hats.r_star).norm() <= 1e-10);
        }
    }
}
