//! Small dense symmetric linear algebra: Cholesky factorization/solves and a
//! Jacobi eigensolver. Matrices here are tiny (i-vector rank × rank), so
//! simple cubic algorithms are the right tool.

use crate::numerics::tensor::Tensor;

/// Errors from factorizations.
#[derive(Debug, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    l: Vec<f64>,
    n: usize,
}

impl Cholesky {
    pub fn new(a: &Tensor) -> Result<Self, LinalgError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(LinalgError::DimMismatch(format!(
                "cholesky wants square, got {:?}",
                a.shape()
            )));
        }
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.at(i, j);
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    l[i * n + j] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { l, n })
    }

    /// Solves A·x = b for one right-hand side.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        // forward: L·y = b
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * y[k];
            }
            y[i] = sum / self.l[i * n + i];
        }
        // backward: Lᵀ·x = y
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }

    /// Solves A·X = B column by column; B given as n×m row-major.
    pub fn solve_matrix(&self, b: &Tensor) -> Tensor {
        assert_eq!(b.rows(), self.n);
        let m = b.cols();
        let mut out = Tensor::zeros(&[self.n, m]);
        let mut col = vec![0.0; self.n];
        for j in 0..m {
            for i in 0..self.n {
                col[i] = b.at(i, j);
            }
            let x = self.solve(&col);
            for i in 0..self.n {
                out.set(i, j, x[i]);
            }
        }
        out
    }

    /// log det A = 2·Σ log L_ii
    pub fn log_det(&self) -> f64 {
        (0..self.n)
            .map(|i| self.l[i * self.n + i].ln())
            .sum::<f64>()
            * 2.0
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, eigenvectors as columns), sorted descending.
pub fn symmetric_eigen(a: &Tensor, sweeps: usize) -> (Vec<f64>, Tensor) {
    let n = a.rows();
    assert_eq!(a.cols(), n, "symmetric_eigen wants square");
    let mut m = a.data().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
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
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new_col, v[r * n + old_col]);
        }
    }
    (eigenvalues, vectors)
}

/// Ridge-regularized least squares: finds W minimizing ‖X·W − Y‖² + λ‖W‖²,
/// with X n×d and Y n×k; returns the d×k weight matrix.
pub fn ridge_solve(x: &Tensor, y: &Tensor, lambda: f64) -> Result<Tensor, LinalgError> {
    let (n, d) = (x.rows(), x.cols());
    if y.rows() != n {
        return Err(LinalgError::DimMismatch(format!(
            "ridge: X has {} rows, Y has {}",
            n,
            y.rows()
        )));
    }
    // normal equations: (XᵀX + λI)·W = XᵀY
    let mut xtx = Tensor::zeros(&[d, d]);
    crate::numerics::tensor::gemm_at_b_acc(xtx.data_mut(), x.data(), x.data(), n, d, d);
    for i in 0..d {
        let v = xtx.at(i, i) + lambda;
        xtx.set(i, i, v);
    }
    let mut xty = Tensor::zeros(&[d, y.cols()]);
    crate::numerics::tensor::gemm_at_b_acc(xty.data_mut(), x.data(), y.data(), n, d, y.cols());
    let chol = Cholesky::new(&xtx)?;
    Ok(chol.solve_matrix(&xty))
}
