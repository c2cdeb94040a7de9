//! Small dense linear algebra: cyclic Jacobi eigendecomposition for symmetric
//! matrices, guarded SPD solves for normal equations, and basis completion.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Largest accepted condition number of a normal-equation matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Sweep budget for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
    #[error("system is ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Symmetric eigendecomposition `C = W diag(values) Wᵀ`, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors, in the order of `values`.
    pub vectors: DMatrix<f64>,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm falls to
/// `1e-12 * ‖C‖_F` (or to exactly zero for the zero matrix).
///
/// The input is symmetrized as `(C + Cᵀ)/2` before iterating.
pub fn symmetric_eigen(c: &DMatrix<f64>) -> Result<SymmetricEigen, LinalgError> {
    let n = c.nrows();
    if n != c.ncols() {
        return Err(LinalgError::NotSquare { rows: n, cols: c.ncols() });
    }
    let mut a = (c + c.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();
    let tol = 1e-12 * scale;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= tol || off == 0.0 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps, off_norm: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Rotation angle annihilating a[p][q] (Golub & Van Loan, sym.schur2).
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = cs * akp - sn * akq;
                    a[(k, q)] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = cs * apk - sn * aqk;
                    a[(q, k)] = sn * apk + cs * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = cs * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + cs * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original column order for equal eigenvalues.
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    Ok(SymmetricEigen { values, vectors, sweeps })
}

/// 2-norm condition number of a symmetric positive semi-definite matrix.
pub fn spd_condition(a: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let eig = symmetric_eigen(a)?;
    let max = eig.values.first().copied().unwrap_or(0.0);
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

/// Solves the normal equations `AᵀA β = Aᵀy` for a design matrix `A`.
///
/// Rejects systems whose normal matrix has condition number above [`MAX_CONDITION`].
pub fn solve_normal_equations(
    design: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>, LinalgError> {
    let normal = design.transpose() * design;
    let condition = spd_condition(&normal)?;
    if !(condition <= MAX_CONDITION) {
        return Err(LinalgError::IllConditioned { condition });
    }
    let atb = design.transpose() * rhs;
    let chol = normal.cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(chol.solve(&atb))
}

/// Extends the unit vector `first` to an orthonormal basis; `first` is column 0.
///
/// Remaining columns come from modified Gram-Schmidt over the standard basis,
/// skipping candidates that are numerically dependent.
pub fn complete_orthonormal_basis(first: &[f64]) -> DMatrix<f64> {
    let n = first.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    basis.push(DVector::from_column_slice(first));
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut cand = DVector::<f64>::zeros(n);
        cand[k] = 1.0;
        // Two passes of Gram-Schmidt for numerical orthogonality.
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&cand);
                cand.axpy(-proj, b, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            basis.push(cand / norm);
        }
    }
    DMatrix::from_columns(&basis)
}
