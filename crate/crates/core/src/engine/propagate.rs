use super::DIVERGENCE_NORM;
use crate::error::{Error, Result};
use crate::linalg::{block2, Matrix};
use crate::model::SystemSpec;
use crate::schedules::SchedulePair;

/// Scaled second moments at one step of the exact propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceCheckpoint {
    pub k: u64,
    pub beta: f64,
    pub gamma: f64,
    /// Unscaled `E[(z - z*)(z - z*)']` in original coordinates.
    pub raw: Matrix,
    pub sigma11: Matrix,
    pub sigma12: Matrix,
    pub sigma22: Matrix,
}

impl CovarianceCheckpoint {
    pub fn sigma21(&self) -> Matrix {
        self.sigma12.transpose()
    }

    pub fn joint(&self) -> Matrix {
        block2(&self.sigma11, &self.sigma12, &self.sigma21(), &self.sigma22)
    }
}

/// Propagates `C_{k+1} = (I - D_k A) C_k (I - D_k A)' + D_k Gamma D_k` from
/// `c0` (second moment of `z_0 - z*`) and reports the scaled blocks in hat
/// coordinates at each requested step.
pub fn propagate_covariance(
    spec: &SystemSpec,
    pair: &SchedulePair,
    c0: &Matrix,
    last: u64,
    checkpoints: &[u64],
) -> Result<Vec<CovarianceCheckpoint>> {
    let (n, dim) = (spec.n(), spec.dim());
    if c0.nrows() != dim || c0.ncols() != dim {
        return Err(Error::Dimension(format!("initial covariance must be {dim}x{dim}")));
    }
    if !c0.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut wanted: Vec<u64> = checkpoints.iter().copied().filter(|&k| k <= last).collect();
    wanted.sort_unstable();
    wanted.dedup();

    let a = spec.block_matrix();
    let gamma = spec.noise.joint();
    let idx = |i: usize, j: usize| i * dim + j;
    let mut c = vec![0.0; dim * dim];
    let mut g = vec![0.0; dim * dim];
    let mut flat_a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            c[idx(i, j)] = c0[(i, j)];
            g[idx(i, j)] = gamma[(i, j)];
            flat_a[idx(i, j)] = a[(i, j)];
        }
    }
    let mut mk = vec![0.0; dim * dim];
    let mut tmp = vec![0.0; dim * dim];
    let mut d = vec![0.0; dim];

    let transform = {
        let mut t = Matrix::identity(dim, dim);
        t.view_mut((n, 0), (dim - n, n)).copy_from(&spec.fast_gain());
        t
    };
    let report = |k: u64, c: &[f64]| {
        let (beta, gamma) = (pair.beta(k), pair.gamma(k));
        let raw = Matrix::from_row_slice(dim, dim, c);
        let h = &transform * &raw * transform.transpose();
        CovarianceCheckpoint {
            k,
            beta,
            gamma,
            sigma11: h.view((0, 0), (n, n)) / beta,
            sigma12: h.view((0, n), (n, dim - n)) / beta,
            sigma22: h.view((n, n), (dim - n, dim - n)) / gamma,
            raw,
        }
    };

    let mut out = Vec::with_capacity(wanted.len());
    let mut next = wanted.iter().peekable();
    for k in 0..=last {
        if next.peek() == Some(&&k) {
            out.push(report(k, &c));
            next.next();
        }
        if k == last {
            break;
        }
        let (beta, gamma_k) = (pair.beta(k), pair.gamma(k));
        for (i, di) in d.iter_mut().enumerate() {
            *di = if i < n { beta } else { gamma_k };
        }
        for i in 0..dim {
            for j in 0..dim {
                let delta = if i == j { 1.0 } else { 0.0 };
                mk[idx(i, j)] = delta - d[i] * flat_a[idx(i, j)];
            }
        }
        // tmp = M C
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = 0.0;
                for l in 0..dim {
                    acc += mk[idx(i, l)] * c[idx(l, j)];
                }
                tmp[idx(i, j)] = acc;
            }
        }
        // C = tmp M' + D Gamma D, symmetrized
        let mut trace = 0.0;
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for l in 0..dim {
                    acc += tmp[idx(i, l)] * mk[idx(j, l)];
                }
                acc += d[i] * d[j] * g[idx(i, j)];
                c[idx(i, j)] = acc;
                c[idx(j, i)] = acc;
            }
            trace += c[idx(i, i)];
        }
        if !trace.is_finite() || trace > DIVERGENCE_NORM * DIVERGENCE_NORM {
            return Err(Error::Diverged { k: k + 1, norm: trace.abs().sqrt() });
        }
    }
    Ok(out)
}
