//! Dense routines for the small symmetric matrices used by the filter and the
//! samplers. Matrices are row-major `k*k` slices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute PSD tolerance on eigenvalues and 2x2 determinants.
pub const PSD_TOL: f64 = 1e-12;

/// Largest negative eigenvalue (relative to the matrix scale) that is still
/// treated as round-off and repaired instead of rejected.
fn repair_limit<T: Scalar>(scale: T) -> T {
    let rel = T::lit(1e-6).max(T::epsilon() * T::lit(100.0));
    rel * scale.max(T::one())
}

pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, m: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * p];
    for i in 0..n {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..p {
                out[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    out
}

pub fn transpose<T: Scalar>(a: &[T], n: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Lower Cholesky factor, `None` when a pivot is not strictly positive.
pub fn cholesky<T: Scalar>(a: &[T], k: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, V)` where column `j` of the row-major `V` is the
/// unit eigenvector for `eigenvalues[j]`.
pub fn sym_eigen<T: Scalar>(a: &[T], k: usize) -> (Vec<T>, Vec<T>) {
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); k * k];
    for i in 0..k {
        v[i * k + i] = T::one();
    }
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..k {
            for j in (i + 1)..k {
                off += m[i * k + j] * m[i * k + j];
            }
        }
        let mut diag = T::zero();
        for i in 0..k {
            diag += m[i * k + i] * m[i * k + i];
        }
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..k {
            for q in (p + 1)..k {
                let apq = m[p * k + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * k + p];
                let aqq = m[q * k + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for r in 0..k {
                    let mrp = m[r * k + p];
                    let mrq = m[r * k + q];
                    m[r * k + p] = c * mrp - s * mrq;
                    m[r * k + q] = s * mrp + c * mrq;
                }
                for r in 0..k {
                    let mpr = m[p * k + r];
                    let mqr = m[q * k + r];
                    m[p * k + r] = c * mpr - s * mqr;
                    m[q * k + r] = s * mpr + c * mqr;
                }
                for r in 0..k {
                    let vrp = v[r * k + p];
                    let vrq = v[r * k + q];
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let eig = (0..k).map(|i| m[i * k + i]).collect();
    (eig, v)
}

/// Symmetrizes and, when the smallest eigenvalue is below `-PSD_TOL`, clamps
/// the spectrum at `PSD_TOL`. Fails when the violation is larger than
/// round-off.
pub fn repair_psd<T: Scalar>(a: &[T], k: usize) -> Result<Vec<T>> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidCovariance("non-finite entry".into()));
    }
    let mut s = a.to_vec();
    for i in 0..k {
        for j in (i + 1)..k {
            let avg = (s[i * k + j] + s[j * k + i]) * T::lit(0.5);
            s[i * k + j] = avg;
            s[j * k + i] = avg;
        }
    }
    let (eig, v) = sym_eigen(&s, k);
    let min = eig.iter().copied().fold(T::infinity(), T::min);
    if min >= -T::lit(PSD_TOL) {
        return Ok(s);
    }
    let scale = eig.iter().map(|e| e.abs()).fold(T::zero(), T::max);
    if min < -repair_limit(scale) {
        return Err(Error::InvalidCovariance(format!(
            "smallest eigenvalue {:e} is not round-off",
            min.as_f64()
        )));
    }
    let floor = T::lit(PSD_TOL);
    let clamped: Vec<T> = eig.iter().map(|&e| e.max(floor)).collect();
    let mut out = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..k {
            let mut acc = T::zero();
            for (e, &lam) in clamped.iter().enumerate() {
                acc += v[i * k + e] * lam * v[j * k + e];
            }
            out[i * k + j] = acc;
        }
    }
    Ok(out)
}

/// Some `L` with `L·Lᵀ = a`: Cholesky when positive definite, otherwise the
/// scaled eigenvector basis of the (repaired) semidefinite matrix.
pub fn psd_factor<T: Scalar>(a: &[T], k: usize) -> Result<Vec<T>> {
    if let Some(l) = cholesky(a, k) {
        return Ok(l);
    }
    let repaired = repair_psd(a, k)?;
    let (eig, v) = sym_eigen(&repaired, k);
    let mut l = vec![T::zero(); k * k];
    for i in 0..k {
        for (j, &lam) in eig.iter().enumerate() {
            l[i * k + j] = v[i * k + j] * lam.max(T::zero()).sqrt();
        }
    }
    Ok(l)
}

pub fn frobenius<T: Scalar>(a: &[T]) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}
