//! Counter-based noise: the draw for step `k` of replica `r` is a pure function
//! of `(base_seed, r, k)`, so replicas can run in any order or in parallel and
//! still replay bit for bit.

use rand::rand_core::{impls, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{factor_covariance, Matrix, Vector};
use crate::model::{NoiseDistribution, SystemSpec};

/// Largest joint dimension `n + m` supported by the samplers.
pub const MAX_JOINT_DIM: usize = 64;

/// Words reserved per step; standard normals almost always need one word each.
const STEP_STRIDE_BITS: u32 = 16;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const WY0: u64 = 0xa076_1d64_78bd_642f;
const WY1: u64 = 0xe703_7ed1_a0b4_28db;

#[inline]
fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stateless generator: the wyrand output function applied to the Weyl
/// sequence `key + counter * W0`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: u64, counter: u64) -> Self {
        Self { key, counter }
    }

    /// Key for a `(base_seed, replica)` stream.
    pub fn stream_key(base_seed: u64, replica: u64) -> u64 {
        mix64(mix64(base_seed.wrapping_add(GOLDEN)) ^ replica.wrapping_mul(0xd6e8_feb8_6659_fd93))
    }

    /// Generator positioned at the first word of step `k`.
    pub fn at_step(key: u64, k: u64) -> Self {
        Self::new(key, k << STEP_STRIDE_BITS)
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let s = self.key.wrapping_add(self.counter.wrapping_mul(WY0));
        let t = (s as u128) * ((s ^ WY1) as u128);
        let out = ((t >> 64) as u64) ^ (t as u64);
        self.counter = self.counter.wrapping_add(1);
        out
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

fn factor_shape(flat: &[f64], dim: usize) -> FactorShape {
    let zero_above = (0..dim).all(|i| (i + 1..dim).all(|j| flat[i * dim + j] == 0.0));
    let zero_below = (0..dim).all(|i| (0..i).all(|j| flat[i * dim + j] == 0.0));
    match (zero_above, zero_below) {
        (true, true) => FactorShape::Diagonal,
        (true, false) => FactorShape::Lower,
        _ => FactorShape::Dense,
    }
}

/// Source of the joint noise `(V_k, W_k)` for one replica.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    pub base_seed: u64,
    pub replica: u64,
    pub distribution: NoiseDistribution,
    n: usize,
    dim: usize,
    key: u64,
    /// Row-major joint factor `F` with `F F' = Gamma`.
    factor: Vec<f64>,
    shape: FactorShape,
    silent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FactorShape {
    Diagonal,
    Lower,
    Dense,
}

impl NoiseStream {
    pub fn new(spec: &SystemSpec, base_seed: u64, replica: u64) -> Result<Self> {
        let factor = factor_covariance(&spec.noise.joint())?;
        Self::from_factor(&factor, spec.n(), spec.noise.distribution, base_seed, replica)
    }

    pub fn from_factor(
        factor: &Matrix,
        n: usize,
        distribution: NoiseDistribution,
        base_seed: u64,
        replica: u64,
    ) -> Result<Self> {
        let dim = factor.nrows();
        if factor.ncols() != dim || n > dim {
            return Err(Error::Dimension("noise factor must be square".into()));
        }
        if dim > MAX_JOINT_DIM {
            return Err(Error::Dimension(format!(
                "joint dimension {dim} exceeds {MAX_JOINT_DIM}"
            )));
        }
        let mut flat = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                flat.push(factor[(i, j)]);
            }
        }
        Ok(Self {
            base_seed,
            replica,
            distribution,
            n,
            dim,
            key: CounterRng::stream_key(base_seed, replica),
            silent: flat.iter().all(|&x| x == 0.0),
            shape: factor_shape(&flat, dim),
            factor: flat,
        })
    }

    /// The same stream for another replica.
    pub fn for_replica(&self, replica: u64) -> Self {
        Self {
            replica,
            key: CounterRng::stream_key(self.base_seed, replica),
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `[V_k; W_k]` into `out[..dim]`.
    #[inline]
    pub fn draw(&self, k: u64, out: &mut [f64]) {
        let dim = self.dim;
        let out = &mut out[..dim];
        if self.silent {
            out.fill(0.0);
            return;
        }
        let mut rng = CounterRng::at_step(self.key, k);
        match self.distribution {
            NoiseDistribution::Gaussian => {
                for x in out.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
            }
            NoiseDistribution::ScaledRademacher => {
                let bits = rng.next_u64();
                for (i, x) in out.iter_mut().enumerate() {
                    *x = if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        match self.shape {
            FactorShape::Diagonal => {
                for (i, x) in out.iter_mut().enumerate() {
                    *x *= self.factor[i * dim + i];
                }
            }
            FactorShape::Lower => {
                // in place, bottom row first so unread inputs are still intact
                for i in (0..dim).rev() {
                    let row = &self.factor[i * dim..i * dim + i + 1];
                    let mut acc = 0.0;
                    for (j, f) in row.iter().enumerate() {
                        acc += f * out[j];
                    }
                    out[i] = acc;
                }
            }
            FactorShape::Dense => {
                let mut xi = [0.0f64; MAX_JOINT_DIM];
                xi[..dim].copy_from_slice(out);
                for (i, x) in out.iter_mut().enumerate() {
                    let row = &self.factor[i * dim..(i + 1) * dim];
                    *x = row.iter().zip(&xi[..dim]).map(|(f, v)| f * v).sum();
                }
            }
        }
    }

    /// Sampler for a known joint dimension with the per-call dispatch resolved up front.
    pub(crate) fn fixed<const D: usize>(&self) -> FixedNoise<'_, D> {
        let kind = if self.dim != D || self.shape == FactorShape::Dense {
            FixedKind::Fallback
        } else if self.silent {
            FixedKind::Silent
        } else {
            let lower = self.shape == FactorShape::Lower;
            match self.distribution {
                NoiseDistribution::Gaussian if lower => FixedKind::GaussianLower,
                NoiseDistribution::Gaussian => FixedKind::GaussianDiagonal,
                NoiseDistribution::ScaledRademacher if lower => FixedKind::RademacherLower,
                NoiseDistribution::ScaledRademacher => FixedKind::RademacherDiagonal,
            }
        };
        let factor = std::array::from_fn(|i| std::array::from_fn(|j| if self.dim == D { self.factor[i * D + j] } else { 0.0 }));
        FixedNoise { stream: self, key: self.key, kind, factor }
    }

    /// `(V_k, W_k)` as vectors.
    pub fn draw_pair(&self, k: u64) -> (Vector, Vector) {
        let mut buf = [0.0f64; MAX_JOINT_DIM];
        self.draw(k, &mut buf);
        (
            Vector::from_column_slice(&buf[..self.n]),
            Vector::from_column_slice(&buf[self.n..self.dim]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FixedKind {
    Silent,
    GaussianDiagonal,
    GaussianLower,
    RademacherDiagonal,
    RademacherLower,
    Fallback,
}

/// [`NoiseStream`] specialised to joint dimension `D`; draws are identical.
#[derive(Debug, Clone)]
pub(crate) struct FixedNoise<'a, const D: usize> {
    stream: &'a NoiseStream,
    key: u64,
    kind: FixedKind,
    factor: [[f64; D]; D],
}

impl<const D: usize> FixedNoise<'_, D> {
    #[inline(always)]
    pub fn draw(&self, k: u64, out: &mut [f64; D]) {
        let mut rng = CounterRng::at_step(self.key, k);
        match self.kind {
            FixedKind::Silent => *out = [0.0; D],
            FixedKind::Fallback => self.stream.draw(k, out),
            FixedKind::GaussianDiagonal | FixedKind::GaussianLower => {
                for x in out.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
            }
            FixedKind::RademacherDiagonal | FixedKind::RademacherLower => {
                let bits = rng.next_u64();
                for (i, x) in out.iter_mut().enumerate() {
                    *x = if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 };
                }
            }
        }
        match self.kind {
            FixedKind::GaussianDiagonal | FixedKind::RademacherDiagonal => {
                for (i, x) in out.iter_mut().enumerate() {
                    *x *= self.factor[i][i];
                }
            }
            FixedKind::GaussianLower | FixedKind::RademacherLower => {
                for i in (0..D).rev() {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += self.factor[i][j] * out[j];
                    }
                    out[i] = acc;
                }
            }
            FixedKind::Silent | FixedKind::Fallback => {}
        }
    }
}
