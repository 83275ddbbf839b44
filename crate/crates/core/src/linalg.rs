//! Small dense helpers on top of `nalgebra` for the m×m matrices that appear
//! in the tilting and saddlepoint computations.

use nalgebra::{DMatrix, DVector};

/// Log-determinant of a symmetric positive-definite matrix via Cholesky.
///
/// Returns `None` when the factorization fails (the matrix is not numerically
/// positive definite).
pub(crate) fn spd_log_det(a: &DMatrix<f64>) -> Option<f64> {
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// `ln|det A|` and the sign of the determinant, via LU with partial pivoting.
///
/// Returns `None` for an exactly singular or non-finite factorization.
pub(crate) fn log_abs_det(a: &DMatrix<f64>) -> Option<(f64, f64)> {
    let lu = a.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    let mut sign = 1.0;
    for i in 0..a.nrows() {
        let d = u[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    let perm_sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    Some((acc, sign * perm_sign))
}

/// Solves `A x = b` for symmetric positive semidefinite `A`.
///
/// Tries a plain Cholesky first; on failure retries once with a ridge of
/// `1e-12 · trace(A) / m` on the diagonal.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let m = a.nrows();
    let ridge = 1e-12 * a.trace() / m as f64;
    if !(ridge > 0.0) {
        return None;
    }
    let mut ridged = a.clone();
    for i in 0..m {
        ridged[(i, i)] += ridge;
    }
    ridged.cholesky().map(|c| c.solve(b))
}

/// Inverse of a general square matrix; `None` if singular or non-finite.
pub(crate) fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = a.clone().try_inverse()?;
    if inv.iter().all(|v| v.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

/// Symmetric sandwich `A⁻¹ V A⁻ᵀ` formed as `B Bᵀ` with `B = A⁻¹ L`, `V = L Lᵀ`.
///
/// The product is bitwise symmetric. `None` when `V` is not positive definite
/// or `A` is singular.
pub(crate) fn sandwich(a: &DMatrix<f64>, v: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = v.clone().cholesky()?.l();
    let b = a.clone().lu().solve(&l)?;
    if !b.iter().all(|x| x.is_finite()) {
        return None;
    }
    let m = a.nrows();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..m {
                s += b[(i, k)] * b[(j, k)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Some(out)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
