use super::noise::{NoiseStream, MAX_JOINT_DIM};
use super::DIVERGENCE_NORM;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{HatCoordinates, SystemSpec};
use crate::schedules::SchedulePair;
use crate::theory::{l_sequence_auto, LSequence};

/// Starting point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Initial {
    pub theta: Vector,
    pub r: Vector,
}

impl Initial {
    pub fn new(theta: Vector, r: Vector) -> Self {
        Self { theta, r }
    }

    pub fn origin(spec: &SystemSpec) -> Self {
        Self::new(Vector::zeros(spec.n()), Vector::zeros(spec.m()))
    }

    pub(crate) fn check(&self, spec: &SystemSpec) -> Result<()> {
        if self.theta.len() != spec.n() || self.r.len() != spec.m() {
            return Err(Error::Dimension(format!(
                "initial state has sizes ({}, {}), expected ({}, {})",
                self.theta.len(),
                self.r.len(),
                spec.n(),
                spec.m()
            )));
        }
        if !self.theta.iter().chain(self.r.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        self.theta.iter().chain(self.r.iter()).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub k: u64,
    pub theta: Vector,
    pub r: Vector,
}

impl TrajectoryState {
    fn from_flat(k: u64, n: usize, z: &[f64]) -> Self {
        Self {
            k,
            theta: Vector::from_column_slice(&z[..n]),
            r: Vector::from_column_slice(&z[n..]),
        }
    }
}

/// Gain applied to the stochastic update.
#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    /// `theta <- theta + beta G1 (...)`, fast update unchanged.
    Slow(Matrix),
    /// Single-time-scale `z <- z + beta G (...)` on the joint state, `gamma_k := beta_k`.
    Joint(Matrix),
}

/// Flat, gain-folded form of one update `z <- z + d (G b - G A z + G u)`.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    pub n: usize,
    pub dim: usize,
    ga: Vec<f64>,
    gb: Vec<f64>,
    /// `None` when the gain is the identity.
    g: Option<Vec<f64>>,
    /// Both blocks move with the slow step size.
    pub single_scale: bool,
}

fn row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl Stepper {
    pub fn new(spec: &SystemSpec, gain: Option<&Gain>) -> Result<Self> {
        let (n, dim) = (spec.n(), spec.dim());
        if dim > MAX_JOINT_DIM {
            return Err(Error::Dimension(format!("joint dimension {dim} exceeds {MAX_JOINT_DIM}")));
        }
        let a = spec.block_matrix();
        let b = spec.block_offset();
        let (g, single_scale) = match gain {
            None => (None, false),
            Some(Gain::Slow(g1)) => {
                if g1.nrows() != n || g1.ncols() != n {
                    return Err(Error::Dimension(format!("slow gain must be {n}x{n}")));
                }
                let mut g = Matrix::identity(dim, dim);
                g.view_mut((0, 0), (n, n)).copy_from(g1);
                (Some(g), false)
            }
            Some(Gain::Joint(g)) => {
                if g.nrows() != dim || g.ncols() != dim {
                    return Err(Error::Dimension(format!("joint gain must be {dim}x{dim}")));
                }
                (Some(g.clone()), true)
            }
        };
        if let Some(g) = &g {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        let (ga, gb) = match &g {
            Some(g) => (g * &a, g * &b),
            None => (a, b),
        };
        Ok(Self {
            n,
            dim,
            ga: row_major(&ga),
            gb: gb.iter().copied().collect(),
            g: g.as_ref().map(row_major),
            single_scale,
        })
    }

    /// One update in place; `u` is the raw joint noise.
    #[inline]
    pub fn step(&self, z: &mut [f64], u: &[f64], beta: f64, gamma: f64) {
        match self.dim {
            1 => self.step_fixed::<1>(z, u, beta, gamma),
            2 => self.step_fixed::<2>(z, u, beta, gamma),
            3 => self.step_fixed::<3>(z, u, beta, gamma),
            4 => self.step_fixed::<4>(z, u, beta, gamma),
            _ => self.step_any(z, u, beta, gamma),
        }
    }

    #[inline(always)]
    fn step_fixed<const D: usize>(&self, z: &mut [f64], u: &[f64], beta: f64, gamma: f64) {
        let z: &mut [f64; D] = (&mut z[..D]).try_into().expect("state length");
        let u: &[f64; D] = u[..D].try_into().expect("noise length");
        self.step_array(z, u, beta, gamma);
    }

    #[inline(always)]
    fn step_array<const D: usize>(&self, z: &mut [f64; D], u: &[f64; D], beta: f64, gamma: f64) {
        let mut drift = [0.0f64; D];
        self.drift(z, u, &mut drift);
        self.apply(z, &drift, beta, gamma);
    }

    fn step_any(&self, z: &mut [f64], u: &[f64], beta: f64, gamma: f64) {
        let mut buf = [0.0f64; MAX_JOINT_DIM];
        let drift = &mut buf[..self.dim];
        self.drift(&z[..self.dim], &u[..self.dim], drift);
        self.apply(z, drift, beta, gamma);
    }

    /// Copy with the matrices in fixed-size arrays, for the ensemble hot loop.
    pub fn fixed<const D: usize>(&self) -> FixedStepper<D> {
        assert_eq!(self.dim, D, "stepper dimension");
        let square = |flat: &[f64]| -> [[f64; D]; D] { std::array::from_fn(|i| std::array::from_fn(|j| flat[i * D + j])) };
        FixedStepper {
            ga: square(&self.ga),
            gb: std::array::from_fn(|i| self.gb[i]),
            g: self.g.as_deref().map(square),
            n: self.n,
            single_scale: self.single_scale,
        }
    }

    #[inline(always)]
    fn drift(&self, z: &[f64], u: &[f64], drift: &mut [f64]) {
        let dim = z.len();
        for (i, d) in drift.iter_mut().enumerate() {
            let row = &self.ga[i * dim..(i + 1) * dim];
            let mut acc = self.gb[i];
            for j in 0..dim {
                acc -= row[j] * z[j];
            }
            match &self.g {
                None => acc += u[i],
                Some(g) => {
                    let grow = &g[i * dim..(i + 1) * dim];
                    for j in 0..dim {
                        acc += grow[j] * u[j];
                    }
                }
            }
            *d = acc;
        }
    }

    #[inline(always)]
    fn apply(&self, z: &mut [f64], drift: &[f64], beta: f64, gamma: f64) {
        let fast = if self.single_scale { beta } else { gamma };
        for (i, (x, d)) in z.iter_mut().zip(drift).enumerate() {
            *x += if i < self.n { beta } else { fast } * d;
        }
    }
}

/// [`Stepper`] for a known joint dimension. Same arithmetic in the same order,
/// so both produce identical iterates.
#[derive(Debug, Clone)]
pub(crate) struct FixedStepper<const D: usize> {
    ga: [[f64; D]; D],
    gb: [f64; D],
    g: Option<[[f64; D]; D]>,
    n: usize,
    single_scale: bool,
}

impl<const D: usize> FixedStepper<D> {
    /// Per-coordinate step sizes for one step.
    #[inline(always)]
    pub fn sizes(&self, beta: f64, gamma: f64) -> [f64; D] {
        let fast = if self.single_scale { beta } else { gamma };
        std::array::from_fn(|i| if i < self.n { beta } else { fast })
    }

    #[inline(always)]
    pub fn step(&self, z: &mut [f64; D], u: &[f64; D], sizes: &[f64; D]) {
        let mut drift = [0.0f64; D];
        for i in 0..D {
            let mut acc = self.gb[i];
            for j in 0..D {
                acc -= self.ga[i][j] * z[j];
            }
            match &self.g {
                None => acc += u[i],
                Some(g) => {
                    for j in 0..D {
                        acc += g[i][j] * u[j];
                    }
                }
            }
            drift[i] = acc;
        }
        for i in 0..D {
            z[i] += sizes[i] * drift[i];
        }
    }
}

#[inline]
pub(crate) fn squared_norm(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum()
}

/// `true` when the state is still finite and below the divergence bound.
#[inline]
pub(crate) fn bounded(z: &[f64]) -> bool {
    let s = squared_norm(z);
    s.is_finite() && s <= DIVERGENCE_NORM * DIVERGENCE_NORM
}

fn run(
    spec: &SystemSpec,
    pair: &SchedulePair,
    gain: Option<&Gain>,
    init: &Initial,
    steps: u64,
    noise: &NoiseStream,
    stride: u64,
) -> Result<Vec<TrajectoryState>> {
    init.check(spec)?;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if noise.dim() != spec.dim() {
        return Err(Error::Dimension("noise stream does not match the system".into()));
    }
    let stepper = Stepper::new(spec, gain)?;
    let n = spec.n();
    let mut z = init.flat();
    let mut u = vec![0.0; spec.dim()];
    let mut out = vec![TrajectoryState::from_flat(0, n, &z)];
    for k in 0..steps {
        noise.draw(k, &mut u);
        stepper.step(&mut z, &u, pair.beta(k), pair.gamma(k));
        if !bounded(&z) {
            return Err(Error::Diverged {
                k: k + 1,
                norm: squared_norm(&z).sqrt(),
            });
        }
        if (k + 1) % stride == 0 || k + 1 == steps {
            out.push(TrajectoryState::from_flat(k + 1, n, &z));
        }
    }
    Ok(out)
}

/// Runs `steps` updates from `init`, recording `k = 0`, every `stride`-th state
/// and the final state.
pub fn simulate(
    spec: &SystemSpec,
    pair: &SchedulePair,
    init: &Initial,
    steps: u64,
    noise: &NoiseStream,
    stride: u64,
) -> Result<Vec<TrajectoryState>> {
    run(spec, pair, None, init, steps, noise, stride)
}

/// Like [`simulate`] with a gain matrix in front of the update.
pub fn simulate_gained(
    spec: &SystemSpec,
    pair: &SchedulePair,
    gain: &Gain,
    init: &Initial,
    steps: u64,
    noise: &NoiseStream,
    stride: u64,
) -> Result<Vec<TrajectoryState>> {
    run(spec, pair, Some(gain), init, steps, noise, stride)
}

/// Runs the decoupled recursion in `(theta_tilde, r_tilde)` coordinates from
/// `start` (original coordinates) up to `last`, recording every `stride`-th
/// state. Uses the same noise draws as [`simulate`].
pub fn simulate_transformed(
    spec: &SystemSpec,
    pair: &SchedulePair,
    lseq: &LSequence,
    start: &TrajectoryState,
    last: u64,
    noise: &NoiseStream,
    stride: u64,
) -> Result<Vec<TrajectoryState>> {
    if start.k < lseq.k0 || last > lseq.last_index() || last < start.k {
        return Err(Error::InvalidArgument(format!(
            "transformed run {}..{} outside the decoupling range {}..{}",
            start.k,
            last,
            lseq.k0,
            lseq.last_index()
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let hats = HatCoordinates::new(spec)?;
    let delta = spec.delta();
    let fast_gain = spec.fast_gain();
    let (theta_hat, r_hat) = hats.apply(&start.theta, &start.r);
    let mut tt = theta_hat.clone();
    let mut rt = lseq.get(start.k) * &theta_hat + r_hat;
    let mut out = vec![TrajectoryState { k: start.k, theta: tt.clone(), r: rt.clone() }];
    for k in start.k..last {
        let (beta, gamma) = (pair.beta(k), pair.gamma(k));
        let (v, w) = noise.draw_pair(k);
        let l = lseq.get(k);
        let b11 = &delta - &spec.a12 * l;
        let coupling = lseq.get(k + 1) + &fast_gain;
        let b22 = &coupling * &spec.a12 * (beta / gamma) + &spec.a22;
        let next_t = &tt - (&b11 * &tt + &spec.a12 * &rt) * beta + &v * beta;
        let next_r = &rt - &b22 * &rt * gamma + &w * gamma + &coupling * &v * beta;
        tt = next_t;
        rt = next_r;
        let z: Vec<f64> = tt.iter().chain(rt.iter()).copied().collect();
        if !bounded(&z) {
            return Err(Error::Diverged { k: k + 1, norm: squared_norm(&z).sqrt() });
        }
        if (k + 1) % stride == 0 || k + 1 == last {
            out.push(TrajectoryState { k: k + 1, theta: tt.clone(), r: rt.clone() });
        }
    }
    Ok(out)
}

/// Maps a transformed state back to original coordinates.
pub fn reconstruct(hats: &HatCoordinates, lseq: &LSequence, state: &TrajectoryState) -> (Vector, Vector) {
    let r_hat = &state.r - lseq.at(state.k) * &state.theta;
    hats.invert(&state.theta, &r_hat)
}

/// Agreement between a direct run and the reconstructed transformed run.
#[derive(Debug, Clone)]
pub struct TransformedCheck {
    pub k0: u64,
    pub steps: u64,
    /// `max_k |z_k - z_rec_k| / (1 + |z_k|)`.
    pub max_relative_error: f64,
    pub final_l_norm: f64,
    pub lseq: LSequence,
}

/// Runs both recursions on shared noise (replica 0 of `base_seed`) and compares them.
pub fn transformed_check(
    spec: &SystemSpec,
    pair: &SchedulePair,
    init: &Initial,
    steps: u64,
    base_seed: u64,
) -> Result<TransformedCheck> {
    let lseq = l_sequence_auto(spec, pair, steps)?;
    let noise = NoiseStream::new(spec, base_seed, 0)?;
    let direct = simulate(spec, pair, init, steps, &noise, 1)?;
    let start = &direct[lseq.k0 as usize];
    let transformed = simulate_transformed(spec, pair, &lseq, start, steps, &noise, 1)?;
    let hats = HatCoordinates::new(spec)?;
    let mut worst = 0.0f64;
    for state in &transformed {
        let orig = &direct[state.k as usize];
        let (theta, r) = reconstruct(&hats, &lseq, state);
        let diff = ((&theta - &orig.theta).norm_squared() + (&r - &orig.r).norm_squared()).sqrt();
        let size = (orig.theta.norm_squared() + orig.r.norm_squared()).sqrt();
        worst = worst.max(diff / (1.0 + size));
    }
    Ok(TransformedCheck {
        k0: lseq.k0,
        steps,
        max_relative_error: worst,
        final_l_norm: lseq.last_norm(),
        lseq,
    })
}
