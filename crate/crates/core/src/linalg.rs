//! Small dense kernels: spectral checks, Sylvester solves, covariance factors.
//!
//! Everything here targets desk-scale problems (joint dimension up to 64), so
//! the Sylvester solver simply vectorizes `AX + XB = C` into a `pq x pq` linear
//! system and factors it with full pivoting. Tolerances are relative to
//! `1 + norm(data)`.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default margin used by [`is_hurwitz`].
pub const DEFAULT_HURWITZ_MARGIN: f64 = 1e-9;

/// Largest vectorized Sylvester system we are willing to assemble.
pub const MAX_SYLVESTER_UNKNOWNS: usize = 4096;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const PIVOT_RATIO_TOL: f64 = 1e-13;
const SCHUR_MAX_ITERATIONS: usize = 200;
const SCHUR_ATTEMPTS: usize = 4;
const SCHUR_RETRY_EPS: f64 = 1e-14;

fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Maximum real part over the eigenvalues of `m`.
pub fn spectral_abscissa(m: &Matrix) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite(m)?;
    if m.is_empty() {
        return Err(Error::Dimension("empty matrix has no spectrum".into()));
    }
    // nalgebra's default Schur loop is unbounded and can cycle, so cap it and
    // retry on orthogonally similar matrices, which share the spectrum
    let n = m.nrows();
    for attempt in 0..SCHUR_ATTEMPTS {
        let (candidate, eps) = if attempt == 0 {
            (m.clone(), f64::EPSILON)
        } else {
            (householder_similarity(m, attempt), SCHUR_RETRY_EPS)
        };
        if let Some(schur) = Schur::try_new(candidate, eps, SCHUR_MAX_ITERATIONS * n) {
            let eig = schur.complex_eigenvalues();
            return Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max));
        }
    }
    Err(Error::EigenNoConvergence)
}

/// Eigendecomposition of a symmetric matrix with a bounded iteration count.
fn symmetric_eigen(sym: &Matrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let budget = SCHUR_MAX_ITERATIONS * sym.nrows();
    [f64::EPSILON, SCHUR_RETRY_EPS]
        .into_iter()
        .find_map(|eps| SymmetricEigen::try_new(sym.clone(), eps, budget))
        .ok_or(Error::EigenNoConvergence)
}

/// Singular values with a bounded iteration count; `None` if the SVD stalls.
fn singular_values(m: &Matrix) -> Option<Vector> {
    let budget = SCHUR_MAX_ITERATIONS * m.nrows().max(m.ncols());
    [f64::EPSILON, SCHUR_RETRY_EPS]
        .into_iter()
        .find_map(|eps| SVD::try_new(m.clone(), false, false, eps, budget))
        .map(|svd| svd.singular_values)
}

/// `H m H` for a fixed reflector `H` that depends on `attempt`.
fn householder_similarity(m: &Matrix, attempt: usize) -> Matrix {
    let n = m.nrows();
    let v = Vector::from_fn(n, |i, _| 1.0 + ((i + 1) * (attempt + 2)) as f64 % 7.0);
    let h = Matrix::identity(n, n) - (&v * v.transpose()) * (2.0 / v.norm_squared());
    &h * m * &h
}

/// `true` iff every eigenvalue has real part below `-margin`.
pub fn is_hurwitz(m: &Matrix, margin: f64) -> Result<bool> {
    Ok(spectral_abscissa(m)? < -margin)
}

/// Solves `A X + X B = C` for `X`.
///
/// `A` is `p x p`, `B` is `q x q` and `C` is `p x q`. The solution is unique iff
/// no eigenvalue of `A` equals the negative of an eigenvalue of `B`.
pub fn solve_sylvester(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    ensure_square(a, "A")?;
    ensure_square(b, "B")?;
    let (p, q) = (a.nrows(), b.nrows());
    if c.nrows() != p || c.ncols() != q {
        return Err(Error::Dimension(format!(
            "C must be {p}x{q}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    for m in [a, b, c] {
        ensure_finite(m)?;
    }
    let size = p * q;
    if size > MAX_SYLVESTER_UNKNOWNS {
        return Err(Error::InvalidArgument(format!(
            "Sylvester system with {size} unknowns exceeds {MAX_SYLVESTER_UNKNOWNS}"
        )));
    }
    if size == 0 {
        return Ok(Matrix::zeros(p, q));
    }

    // Column-major vec: x[i + j*p] = X[(i, j)].
    // vec(AX) = (I_q kron A) vec(X), vec(XB) = (B^T kron I_p) vec(X).
    let mut k = Matrix::zeros(size, size);
    for j in 0..q {
        for i in 0..p {
            let row = i + j * p;
            for l in 0..p {
                k[(row, l + j * p)] += a[(i, l)];
            }
            for l in 0..q {
                k[(row, i + l * p)] += b[(l, j)];
            }
        }
    }
    let rhs = Vector::from_iterator(size, c.iter().copied());

    let lu = k.full_piv_lu();
    let u = lu.u();
    let diag = u.diagonal();
    let largest = diag.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let smallest = diag.iter().fold(f64::INFINITY, |acc, x| acc.min(x.abs()));
    if largest == 0.0 || smallest <= PIVOT_RATIO_TOL * largest {
        return Err(Error::SingularPencil);
    }
    let x = lu.solve(&rhs).ok_or(Error::SingularPencil)?;
    let x = Matrix::from_column_slice(p, q, x.as_slice());

    let residual = (a * &x + &x * b - c).norm();
    if !(residual <= 1e-10 * (1.0 + c.norm())) {
        return Err(Error::SingularPencil);
    }
    Ok(x)
}

/// Solves the Lyapunov equation `A X + X A^T = C` and symmetrizes the result.
pub fn solve_lyapunov(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let x = solve_sylvester(a, &a.transpose(), c)?;
    Ok(symmetrize(&x))
}

pub fn is_symmetric(m: &Matrix) -> bool {
    m.nrows() == m.ncols() && max_abs(&(m - m.transpose())) <= SYMMETRY_TOL * (1.0 + max_abs(m))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &Matrix) -> Result<f64> {
    ensure_square(m, "matrix")?;
    ensure_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let eig = symmetric_eigen(&symmetrize(m))?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Returns `F` with `F F^T = gamma`.
///
/// Positive definite inputs get the lower-triangular Cholesky factor. Singular
/// positive semidefinite inputs fall back to a symmetric eigendecomposition with
/// tiny negative eigenvalues clipped to zero.
pub fn factor_covariance(gamma: &Matrix) -> Result<Matrix> {
    ensure_square(gamma, "covariance")?;
    ensure_finite(gamma)?;
    if !is_symmetric(gamma) {
        return Err(Error::NotSymmetric);
    }
    let n = gamma.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let scale = 1.0 + gamma.norm();
    let sym = symmetrize(gamma);

    if let Some(chol) = sym.clone().cholesky() {
        let l = chol.unpack();
        if (&l * l.transpose() - &sym).norm() <= 1e-12 * scale {
            return Ok(l);
        }
    }

    let eig = symmetric_eigen(&sym)?;
    let mut f = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -PSD_TOL * scale {
            return Err(Error::NotPsd {
                min_eigenvalue: lambda,
            });
        }
        let s = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

/// Whether `m` is symmetric positive semidefinite within the usual tolerance.
pub fn is_psd(m: &Matrix) -> Result<bool> {
    if !is_symmetric(m) {
        return Ok(false);
    }
    Ok(min_symmetric_eigenvalue(m)? >= -PSD_TOL * (1.0 + m.norm()))
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let Some(sv) = singular_values(m) else {
        return f64::INFINITY;
    };
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Largest singular value (induced Euclidean norm).
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    // the Frobenius norm bounds it from above if the SVD stalls
    singular_values(m).map_or_else(|| m.norm(), |sv| sv.iter().copied().fold(0.0, f64::max))
}

/// Inverse of a square matrix, rejecting matrices with condition number above `max_condition`.
pub fn inverse_checked(m: &Matrix, max_condition: f64) -> Option<Matrix> {
    if m.nrows() != m.ncols() {
        return None;
    }
    let inv = m.clone().try_inverse()?;
    let cond = m.norm() * inv.norm();
    if cond.is_finite() && cond <= max_condition {
        Some(inv)
    } else {
        None
    }
}

/// `|a - b|_F / |b|_F`, falling back to the absolute error when `b` vanishes.
pub fn relative_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).norm();
    let denom = b.norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

/// Block matrix `[[a11, a12], [a21, a22]]`.
pub fn block2(a11: &Matrix, a12: &Matrix, a21: &Matrix, a22: &Matrix) -> Matrix {
    let (n, m) = (a11.nrows(), a22.nrows());
    let mut out = Matrix::zeros(n + m, a11.ncols() + a22.ncols());
    out.view_mut((0, 0), (n, a11.ncols())).copy_from(a11);
    out.view_mut((0, a11.ncols()), (n, a12.ncols())).copy_from(a12);
    out.view_mut((n, 0), (m, a21.ncols())).copy_from(a21);
    out.view_mut((n, a11.ncols()), (m, a22.ncols())).copy_from(a22);
    out
}
