//! Dense linear-algebra helpers shared by the kernel, solver and complexity code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and matching orthonormal eigenvector columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(matrix: &DMatrix<f64>) -> Self {
        let n = matrix.nrows();
        if n == 0 {
            return SymEigen {
                values: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(matrix.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        SymEigen { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of eigenvalues strictly above `rel * max(λ_max, 0)`.
    pub fn rank(&self, rel: f64) -> usize {
        let cutoff = rel * self.max().max(0.0);
        self.values.iter().filter(|&&v| v > cutoff && v > 0.0).count()
    }

    /// `V f(Λ) Vᵀ` for a scalar map applied to the eigenvalues.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = scale_columns(&self.vectors, |k| f(self.values[k]));
        let mut out = &scaled * self.vectors.transpose();
        symmetrize(&mut out);
        out
    }

    /// Whitening map `Λ_r^{-1/2} V_rᵀ` over the eigenpairs above `rel · λ_max`.
    /// `‖W x‖²` equals `xᵀ A⁺ x` for `x` in the numerical range.
    pub fn pinv_sqrt_rows(&self, rel: f64) -> DMatrix<f64> {
        let r = self.rank(rel);
        let n = self.vectors.nrows();
        let mut out = DMatrix::zeros(r, n);
        for k in 0..r {
            let s = 1.0 / self.values[k].sqrt();
            for i in 0..n {
                out[(k, i)] = s * self.vectors[(i, k)];
            }
        }
        out
    }
}

pub fn scale_columns(m: &DMatrix<f64>, f: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col *= f(k);
    }
    out
}

/// Replace `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute difference between `m` and its transpose.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().sum()
}

/// Outcome of a symmetric positive (semi)definite solve.
#[derive(Clone, Debug)]
pub struct SpdSolution {
    pub x: DVector<f64>,
    /// `‖A x − b‖ / ‖b‖` (0 when `b = 0`).
    pub relative_residual: f64,
    /// True when Cholesky failed and the eigendecomposition route was used.
    pub used_fallback: bool,
}

const REFINEMENT_STEPS: usize = 3;

/// Solve `A x = b` for symmetric PSD `A`: Cholesky with iterative refinement,
/// falling back to an eigendecomposition pseudo-inverse when the
/// factorization breaks down.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> SpdSolution {
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return SpdSolution {
            x: DVector::zeros(b.len()),
            relative_residual: 0.0,
            used_fallback: false,
        };
    }
    let residual = |x: &DVector<f64>| b - a * x;
    if let Some(chol) = a.clone().cholesky() {
        let mut x = chol.solve(b);
        let mut r = residual(&x);
        for _ in 0..REFINEMENT_STEPS {
            if r.norm() <= 1e-14 * b_norm {
                break;
            }
            let dx = chol.solve(&r);
            let candidate = &x + dx;
            let r_candidate = residual(&candidate);
            if r_candidate.norm() >= r.norm() {
                break;
            }
            x = candidate;
            r = r_candidate;
        }
        if x.iter().all(|v| v.is_finite()) {
            return SpdSolution {
                relative_residual: r.norm() / b_norm,
                x,
                used_fallback: false,
            };
        }
    }
    let x = pinv_solve(&SymEigen::new(a), b, 1e-12);
    SpdSolution {
        relative_residual: residual(&x).norm() / b_norm,
        x,
        used_fallback: true,
    }
}

/// `A⁺ b` from a precomputed eigendecomposition, treating eigenvalues at or
/// below `rel · λ_max` as zero.
pub fn pinv_solve(eig: &SymEigen, b: &DVector<f64>, rel: f64) -> DVector<f64> {
    let r = eig.rank(rel);
    let mut x = DVector::zeros(b.len());
    for k in 0..r {
        let v = eig.vectors.column(k);
        let coef = v.dot(b) / eig.values[k];
        x.axpy(coef, &v, 1.0);
    }
    x
}
