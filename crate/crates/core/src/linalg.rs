//! Dense linear algebra for small symmetric matrices (the 10x10 logit
//! covariances). Cyclic Jacobi rotations handle the eigenproblems; nothing
//! here is tuned for matrices beyond a few dozen rows.

use crate::error::{Error, Result};

/// Eigendecomposition A = V diag(w) V^T of a symmetric matrix, by cyclic
/// Jacobi rotations. Returns (w, V) with V row-major and eigenvector j in
/// column j. Eigenvalues are unordered.
pub fn eigen_sym(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "matrix of {} entries is not {n}x{n}",
            a.len()
        )));
    }
    let sym_tol = 1e-6 * max_abs(a).max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i * n + j] - a[j * n + i]).abs() > sym_tol {
                return Err(Error::Domain(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a[i * n + j],
                    a[j * n + i]
                )));
            }
        }
    }
    let mut m = a.to_vec();
    // Work on the symmetrized average so tiny input asymmetry cannot bias
    // one triangle.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[i * n + j] * m[i * n + j];
            }
        }
        s
    };
    let scale = max_abs(&m).max(1.0);
    let target = (1e-14 * scale) * (1e-14 * scale) * (n * n) as f64;
    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        if off(&m) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-root tangent keeps rotations well-conditioned.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off(&m) > target.max(1e-20) {
        return Err(Error::Numeric(format!(
            "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps (off-diagonal {:.3e})",
            off(&m).sqrt()
        )));
    }
    let w = (0..n).map(|i| m[i * n + i]).collect();
    Ok((w, v))
}

/// Symmetric square root via eigendecomposition. Eigenvalues in
/// [-neg_tol, 0) are clamped to zero; anything below -neg_tol is an error
/// reporting the offending eigenvalue.
pub fn sqrt_psd(a: &[f64], n: usize, neg_tol: f64) -> Result<Vec<f64>> {
    let (w, v) = eigen_sym(a, n)?;
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -neg_tol {
        return Err(Error::Numeric(format!(
            "matrix is not positive semidefinite: min eigenvalue {min:.6e}"
        )));
    }
    let roots: Vec<f64> = w.iter().map(|&x| x.max(0.0).sqrt()).collect();
    // V diag(roots) V^T.
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (k, &r) in roots.iter().enumerate() {
                s += v[i * n + k] * r * v[j * n + k];
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Ok(out)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix: A = L L^T.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::Shape(format!(
            "matrix of {} entries is not {n}x{n}",
            a.len()
        )));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "matrix is not positive definite (pivot {s:.6e} at row {i})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves L y = b by forward substitution, L lower-triangular.
pub fn solve_lower(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// C = A B for square row-major matrices.
pub fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

pub fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, &x| acc.max(x.abs()))
}
