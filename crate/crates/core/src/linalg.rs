//! Small dense linear algebra kernels: Cholesky solve, symmetric Jacobi
//! eigenvalues and power iteration. Sizes here are at most a few hundred.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Solve `a x = rhs` for symmetric positive definite `a`.
///
/// A pivot at or below `rel_tol * max(diag(a))` is reported as singular.
pub fn cholesky_solve<T: Scalar>(
    a: ArrayView2<T>,
    rhs: ArrayView1<T>,
    rel_tol: T,
) -> Result<Array1<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if rhs.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
    }
    let scale = a.diag().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let floor = rel_tol * scale.max(T::min_positive_value());

    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) {
            return Err(Error::Singular { column: j, pivot: d.to_f64_lossy() });
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }

    // forward then backward substitution
    let mut y = rhs.to_owned();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = y;
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<T: Scalar>(a: ArrayView2<T>) -> Vec<T> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let v = m[[i, j]] * m[[i, j]];
                total += v;
                if i != j {
                    off += v;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<T> = m.diag().to_vec();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
pub fn power_iteration<T: Scalar>(a: ArrayView2<T>, max_iters: usize, tol: T) -> T {
    let n = a.nrows();
    if n == 0 {
        return T::zero();
    }
    // deterministic start with nonzero overlap on every coordinate
    let mut v = Array1::from_shape_fn(n, |i| T::one() + T::lit(0.01) * T::from_usize_lossy(i % 7));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    let mut lambda = T::zero();
    for _ in 0..max_iters {
        let w = a.dot(&v);
        let next = v.dot(&w);
        let wn = w.dot(&w).sqrt();
        if wn == T::zero() {
            return T::zero();
        }
        v = w.mapv(|x| x / wn);
        if (next - lambda).abs() <= tol * next.abs().max(T::min_positive_value()) {
            return wn.max(next);
        }
        lambda = next;
    }
    lambda
}
