//! Small dense linear algebra kernels: Cholesky, pivoted LU and a Jacobi
//! eigen-solver for symmetric matrices.
//!
//! The matrices handled here are at most a few thousand on a side (the
//! feature covariance is Z×Z and the exact Gram matrix is capped), so
//! straightforward row-major algorithms are adequate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factors `a`. Only the lower triangle of `a` is read.
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        Error::check_len(n, a.ncols())?;
        let mut l = a.to_owned();
        for j in 0..n {
            let (done, mut rest) = l.view_mut().split_at(Axis(0), j);
            let mut row_j = rest.row_mut(0);
            // row j: entries left of the diagonal
            for k in 0..j {
                let lk = done.row(k);
                let mut s = row_j[k];
                for m in 0..k {
                    s -= row_j[m] * lk[m];
                }
                row_j[k] = s / lk[k];
            }
            let mut d = row_j[j];
            for m in 0..j {
                d -= row_j[m] * row_j[m];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::numerical(format!("matrix is not positive definite (pivot {j} = {d:e})")));
            }
            row_j[j] = d.sqrt();
            for m in j + 1..n {
                row_j[m] = 0.0;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.dim();
        let l = &self.lower;
        let mut y = b.to_owned();
        for i in 0..n {
            let row = l.row(i);
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    /// Sum of log diagonal entries, i.e. half the log-determinant.
    pub fn half_log_det(&self) -> f64 {
        self.lower.diag().iter().map(|d| d.ln()).sum()
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        Error::check_len(n, a.ncols())?;
        let mut lu = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[[i, k]].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(Error::numerical(format!("matrix is singular at column {k}")));
            }
            if p != k {
                for j in 0..n {
                    lu.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
            }
            let d = lu[[k, k]];
            for i in k + 1..n {
                let f = lu[[i, k]] / d;
                lu[[i, k]] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[[i, j]] -= f * lu[[k, j]];
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.lu.nrows();
        let mut y: Array1<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lu[[i, k]] * y[k];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.lu[[i, k]] * y[k];
            }
            y[i] = s / self.lu[[i, i]];
        }
        y
    }
}

/// Solves the symmetric system `A X = B`, preferring Cholesky and falling
/// back to pivoted LU when `A` is not numerically positive definite.
///
/// Returns the solution and whether the fallback was taken.
pub fn solve_symmetric(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<(Array2<f64>, bool)> {
    Error::check_len(a.nrows(), b.nrows())?;
    match Cholesky::new(a) {
        Ok(chol) => Ok((chol.solve_matrix(b), false)),
        Err(err) => {
            log::warn!("{err}; falling back to pivoted LU");
            let mut full = a.to_owned();
            // Only the lower triangle is trusted; mirror it.
            for i in 0..full.nrows() {
                for j in i + 1..full.ncols() {
                    full[[i, j]] = full[[j, i]];
                }
            }
            let lu = Lu::new(full.view())
                .map_err(|e| Error::numerical(format!("{e}; try a larger regularization parameter")))?;
            let mut out = Array2::zeros(b.raw_dim());
            for (j, col) in b.axis_iter(Axis(1)).enumerate() {
                out.column_mut(j).assign(&lu.solve(col));
            }
            Ok((out, true))
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    Error::check_len(n, a.ncols())?;
    let mut m = a.to_owned();
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    m[[k, p]] = c * akp - s * akq;
                    m[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[[p, k]];
                    let aqk = m[[q, k]];
                    m[[p, k]] = c * apk - s * aqk;
                    m[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = m.diag().to_vec();
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

/// Replaces `a` with `(a + aᵀ)/2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}
