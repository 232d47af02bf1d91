//! Small dense linear algebra: Cholesky factorization, triangular solves,
//! SPD inverses, and orthonormalization.
//!
//! Matrices in this crate are modest (tens of coordinates), so plain
//! cache-friendly loops are both simpler and fast enough; the only heavy
//! matrix work — MLP layer products — goes through `ndarray::dot`, which has
//! tuned kernels.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower Cholesky factor `L` of a symmetric positive-definite matrix,
/// i.e. `A = L Lᵀ` with positive diagonal.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("cholesky: matrix must be square"));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let dj = diag.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y` for lower-triangular `L`.
pub fn solve_lower_transpose(l: ArrayView2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `A x = b` given the lower Cholesky factor of `A`.
pub fn solve_with_cholesky(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, y.view())
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let col = solve_with_cholesky(l.view(), e.view());
        inv.column_mut(j).assign(&col);
        e[j] = 0.0;
    }
    // Symmetrize away the last-ulp asymmetry from columnwise solves.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Ok(inv)
}

/// Orthonormalizes the columns of a square matrix by modified Gram-Schmidt
/// with one re-orthogonalization pass.
///
/// Applied to a matrix of independent standard normals this yields an
/// orthogonal matrix distributed by the rotation-invariant (Haar) law, the
/// standard recipe for a random eigenbasis.
pub fn orthonormalize(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("orthonormalize: matrix must be square"));
    }
    let mut q = a.to_owned();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let dot = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-dot, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm < 1e-12 {
            return Err(Error::invalid("orthonormalize: rank-deficient input"));
        }
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(q)
}

/// Frobenius norm of a matrix.
pub fn frobenius_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, ascending.
/// Input must be square and symmetric to about machine precision.
pub fn sym_eigenvalues(a: ArrayView2<f64>) -> Result<Vec<f64>> {
    let d = a.nrows();
    if a.ncols() != d || d == 0 {
        return Err(Error::invalid(
            "sym_eigenvalues: matrix must be square and nonempty",
        ));
    }
    let scale = 1.0 + frobenius_norm(a);
    for i in 0..d {
        for j in 0..d {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite("matrix entry"));
            }
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::invalid("sym_eigenvalues: matrix is not symmetric"));
            }
        }
    }
    let mut m = a.to_owned();
    // Work on the symmetrized copy so tiny asymmetries cannot drift.
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..d.saturating_sub(1) {
            for q in (p + 1)..d {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                // Rotation angle zeroing the (p, q) entry.
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..d {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    let new_p = c * akp - s * akq;
                    let new_q = s * akp + c * akq;
                    m[(k, p)] = new_p;
                    m[(p, k)] = new_p;
                    m[(k, q)] = new_q;
                    m[(q, k)] = new_q;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..d).map(|i| m[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    Ok(eigs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue(a: ArrayView2<f64>) -> Result<f64> {
    Ok(*sym_eigenvalues(a)?.first().expect("nonempty"))
}
