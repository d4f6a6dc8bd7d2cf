//! Small dense linear-algebra kernels: Cholesky factorization with
//! triangular solves (the only route used to evaluate Gaussian densities),
//! and a Jacobi eigensolver for the 2-D projections in the export tooling.

use crate::error::{Error, Result};
use crate::real::Real;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<F: Real>(a: &ArrayView2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky requires a square matrix");
    let mut l = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum = sum - l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= F::zero() || !sum.is_finite() {
                    return Err(Error::numerical(
                        "cholesky",
                        format!("non-positive pivot {sum} at index {i}"),
                    ));
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn solve_lower<F: Real>(l: &ArrayView2<F>, b: &ArrayView1<F>) -> Array1<F> {
    let n = l.nrows();
    let mut y = Array1::<F>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    y
}

/// Solves `L^T x = y` for lower-triangular `L`.
pub fn solve_lower_transpose<F: Real>(l: &ArrayView2<F>, y: &ArrayView1<F>) -> Array1<F> {
    let n = l.nrows();
    let mut x = Array1::<F>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum = sum - l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Solves `(L L^T) x = b`.
pub fn chol_solve<F: Real>(l: &ArrayView2<F>, b: &ArrayView1<F>) -> Array1<F> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, &y.view())
}

/// Solves `(L L^T) X = B` column by column.
pub fn chol_solve_mat<F: Real>(l: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    let n = l.nrows();
    let m = b.ncols();
    let mut out = Array2::<F>::zeros((n, m));
    for j in 0..m {
        let col = b.column(j).to_owned();
        let x = chol_solve(l, &col.view());
        out.column_mut(j).assign(&x);
    }
    out
}

/// Inverse of `L L^T`, computed through triangular solves against identity.
pub fn chol_inverse<F: Real>(l: &ArrayView2<F>) -> Array2<F> {
    let n = l.nrows();
    let eye = Array2::<F>::eye(n);
    chol_solve_mat(l, &eye.view())
}

/// `ln det(L L^T) = 2 * sum(ln diag(L))`.
pub fn chol_logdet<F: Real>(l: &ArrayView2<F>) -> F {
    let mut s = F::zero();
    for i in 0..l.nrows() {
        s = s + l[[i, i]].ln();
    }
    s + s
}

/// Effective covariance `A A^T + eps * I`.
pub fn factor_covariance<F: Real>(a: &ArrayView2<F>, eps: F) -> Array2<F> {
    let mut sigma = a.dot(&a.t());
    for i in 0..sigma.nrows() {
        sigma[[i, i]] += eps;
    }
    sigma
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with matching eigenvector columns.
pub fn sym_eigen(a: &ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen requires a square matrix");
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
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
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let values = Array1::from_iter(idx.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (out_col, &in_col) in idx.iter().enumerate() {
        vectors.column_mut(out_col).assign(&v.column(in_col));
    }
    (values, vectors)
}
