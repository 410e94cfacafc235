//! Kernel matrices over row and column entities and their Kronecker
//! composition over vectorized grid entries.
//!
//! Every [`KernelMatrix`] carries its eigendecomposition, computed once at
//! construction. Factorizations, square roots, pseudo-inverses and spectral
//! bounds all derive from that cache.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};
use crate::sampling::{vec_index, Entry};

/// Relative symmetry tolerance accepted by [`KernelMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Absolute (scaled) asymmetry accepted by [`psd_repair`].
pub const REPAIR_SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_JITTER · trace/dim` count as nonnegative.
pub const PSD_JITTER: f64 = 1e-10;
/// Eigenvalues at or below `RANK_TOL · λ_max` are treated as zero by [`factorize`].
pub const RANK_TOL: f64 = 1e-10;
/// Default ceiling on the dimension of an explicit Kronecker product.
pub const DEFAULT_KRONECKER_LIMIT: usize = 16384;

/// Symmetric positive semidefinite similarity matrix with its cached
/// eigendecomposition (eigenvalues descending).
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    entries: DMatrix<f64>,
    eigen: SymEigen,
}

impl KernelMatrix {
    /// Validate symmetry and positive semidefiniteness and cache the
    /// eigendecomposition.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "kernel must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = linalg::max_abs(&entries).max(f64::MIN_POSITIVE);
        let asymmetry = linalg::max_asymmetry(&entries);
        if asymmetry > SYMMETRY_TOL * scale {
            return Err(Error::Symmetry {
                asymmetry,
                tolerance: SYMMETRY_TOL * scale,
            });
        }
        let mut entries = entries;
        linalg::symmetrize(&mut entries);
        let eigen = SymEigen::new(&entries);
        let floor = -PSD_JITTER * (entries.trace() / entries.nrows() as f64).max(0.0);
        if eigen.min() < floor {
            return Err(Error::NotPsd {
                min_eigenvalue: eigen.min(),
            });
        }
        Ok(KernelMatrix { entries, eigen })
    }

    pub fn identity(dim: usize) -> Self {
        KernelMatrix {
            entries: DMatrix::identity(dim, dim),
            eigen: SymEigen {
                values: DVector::from_element(dim, 1.0),
                vectors: DMatrix::identity(dim, dim),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigen.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigen.vectors
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigen.values[0]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.trace() / self.dim() as f64
    }

    pub fn numerical_rank(&self) -> usize {
        self.eigen.rank(RANK_TOL)
    }

    /// `‖V Λ Vᵀ − K‖_F / ‖K‖_F` for the cached eigendecomposition.
    pub fn reconstruction_error(&self) -> f64 {
        let back = self.eigen.reconstruct_with(|v| v);
        let norm = self.entries.norm();
        if norm == 0.0 {
            back.norm()
        } else {
            (back - &self.entries).norm() / norm
        }
    }

    /// Principal square root `K^{1/2}`.
    pub fn sqrt(&self) -> DMatrix<f64> {
        self.eigen.reconstruct_with(|v| v.max(0.0).sqrt())
    }

    /// `K⁺ X` on the numerical range (eigenvalues above `RANK_TOL · λ_max`).
    pub fn pinv_apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let r = self.numerical_rank();
        let v = self.eigen.vectors.columns(0, r);
        let mut coords = v.transpose() * x;
        for k in 0..r {
            let s = 1.0 / self.eigen.values[k];
            coords.row_mut(k).scale_mut(s);
        }
        v * coords
    }

    /// `trace(Xᵀ K⁺ X)`, the RKHS energy of the columns of `X`.
    pub fn pinv_energy(&self, x: &DMatrix<f64>) -> f64 {
        let whiten = self.eigen.pinv_sqrt_rows(RANK_TOL);
        (whiten * x).norm_squared()
    }

    /// Same kernel multiplied by `alpha > 0`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel scale must be positive, got {alpha}"
            )));
        }
        Ok(KernelMatrix {
            entries: &self.entries * alpha,
            eigen: SymEigen {
                values: &self.eigen.values * alpha,
                vectors: self.eigen.vectors.clone(),
            },
        })
    }
}

/// A repaired kernel together with the spectral mass removed by clipping.
#[derive(Clone, Debug)]
pub struct PsdRepair {
    pub kernel: KernelMatrix,
    /// Sum of the magnitudes of the clipped negative eigenvalues.
    pub clipped_mass: f64,
}

/// Nearest positive semidefinite matrix (in Frobenius norm) obtained by
/// clipping negative eigenvalues at zero. PSD inputs are returned unchanged.
pub fn psd_repair(entries: &DMatrix<f64>) -> Result<PsdRepair> {
    if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "kernel must be square and nonempty, got {}x{}",
            entries.nrows(),
            entries.ncols()
        )));
    }
    let tolerance = REPAIR_SYMMETRY_TOL * linalg::max_abs(entries).max(1.0);
    let asymmetry = linalg::max_asymmetry(entries);
    if asymmetry > tolerance {
        return Err(Error::Symmetry {
            asymmetry,
            tolerance,
        });
    }
    let mut sym = entries.clone();
    linalg::symmetrize(&mut sym);
    let mut eigen = SymEigen::new(&sym);
    let clipped_mass: f64 = eigen.values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    if clipped_mass == 0.0 {
        return Ok(PsdRepair {
            kernel: KernelMatrix {
                entries: sym,
                eigen,
            },
            clipped_mass,
        });
    }
    eigen.values.apply(|v| *v = v.max(0.0));
    let repaired = eigen.reconstruct_with(|v| v);
    Ok(PsdRepair {
        kernel: KernelMatrix {
            entries: repaired,
            eigen,
        },
        clipped_mass,
    })
}

/// Shape of the decreasing diagonal weights of the synthetic DFT kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightProfile {
    /// `w_i = N / (i + 1)`.
    #[default]
    Harmonic,
    /// `w_i = N − i`.
    Linear,
    /// `w_i = N · ratio^i` with `0 < ratio < 1`.
    Geometric { ratio: f64 },
}

impl WeightProfile {
    pub fn weights(&self, dim: usize) -> Vec<f64> {
        let n = dim as f64;
        (0..dim)
            .map(|i| match *self {
                WeightProfile::Harmonic => n / (i as f64 + 1.0),
                WeightProfile::Linear => n - i as f64,
                WeightProfile::Geometric { ratio } => n * ratio.powi(i as i32),
            })
            .collect()
    }
}

/// Diagonal weights of the frequency-domain matrix `D` in `R D Rᴴ`.
#[derive(Clone, Debug, PartialEq)]
pub struct DftKernelSpec {
    weights: Vec<f64>,
}

impl DftKernelSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSpec("at least one weight is required".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidSpec(format!("weights must be positive, got {w}")));
        }
        if let Some(i) = weights.windows(2).position(|w| w[0] <= w[1]) {
            return Err(Error::InvalidSpec(format!(
                "weights must be strictly decreasing: w[{}]={} <= w[{}]={}",
                i,
                weights[i],
                i + 1,
                weights[i + 1]
            )));
        }
        Ok(DftKernelSpec { weights })
    }

    pub fn from_profile(dim: usize, profile: WeightProfile) -> Result<Self> {
        if let WeightProfile::Geometric { ratio } = profile {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "geometric ratio must lie in (0, 1), got {ratio}"
                )));
            }
        }
        Self::new(profile.weights(dim))
    }

    pub fn harmonic(dim: usize) -> Result<Self> {
        Self::from_profile(dim, WeightProfile::Harmonic)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// First row `c` of the real circulant `Re(R D Rᴴ)`; entry `(i, j)` of the
    /// circulant is `c[(i − j) mod N]`.
    pub fn circulant_row(&self) -> Vec<f64> {
        let n = self.dim();
        let mut row = vec![0.0; n];
        for (d, slot) in row.iter_mut().enumerate() {
            // fold the lag so that c[d] and c[N-d] come out bit-identical
            let lag = d.min(n - d);
            let sum: f64 = self
                .weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * (2.0 * PI * ((k * lag) % n) as f64 / n as f64).cos())
                .sum();
            *slot = sum / n as f64;
        }
        row
    }

    /// `abs(Re(R D Rᴴ))` before any PSD repair.
    pub fn unrepaired_entries(&self) -> DMatrix<f64> {
        let n = self.dim();
        let row = self.circulant_row();
        DMatrix::from_fn(n, n, |i, j| row[(i + n - j) % n].abs())
    }
}

/// Synthetic kernel: elementwise modulus of the DFT-diagonalized circulant,
/// followed by eigenvalue clipping.
pub fn build_dft_kernel(spec: &DftKernelSpec) -> Result<KernelMatrix> {
    build_dft_kernel_report(spec).map(|r| r.kernel)
}

/// Like [`build_dft_kernel`] but also reports the clipped spectral mass.
pub fn build_dft_kernel_report(spec: &DftKernelSpec) -> Result<PsdRepair> {
    psd_repair(&spec.unrepaired_entries())
}

/// Explicit Kronecker product `K_h ⊗ K_w` with the default size limit.
pub fn kronecker_kernel(kh: &KernelMatrix, kw: &KernelMatrix) -> Result<KernelMatrix> {
    kronecker_kernel_with_limit(kh, kw, DEFAULT_KRONECKER_LIMIT)
}

/// Explicit Kronecker product. The eigendecomposition is assembled from the
/// factors' eigenpairs rather than recomputed.
pub fn kronecker_kernel_with_limit(
    kh: &KernelMatrix,
    kw: &KernelMatrix,
    limit: usize,
) -> Result<KernelMatrix> {
    let requested = kh
        .dim()
        .saturating_mul(kw.dim());
    if requested > limit {
        return Err(Error::SizeLimit { requested, limit });
    }
    let entries = kh.entries.kronecker(&kw.entries);
    let raw_values = kh.eigen.values.kronecker(&kw.eigen.values);
    let raw_vectors = kh.eigen.vectors.kronecker(&kw.eigen.vectors);
    let mut order: Vec<usize> = (0..requested).collect();
    order.sort_by(|&a, &b| raw_values[b].total_cmp(&raw_values[a]));
    let values = DVector::from_iterator(requested, order.iter().map(|&k| raw_values[k]));
    let mut vectors = DMatrix::zeros(requested, requested);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &raw_vectors.column(src));
    }
    Ok(KernelMatrix {
        entries,
        eigen: SymEigen { values, vectors },
    })
}

/// Thin feature map `Φ` with `Φ Φᵀ = K`.
#[derive(Clone, Debug)]
pub struct FeatureFactorization {
    factor: DMatrix<f64>,
}

impl FeatureFactorization {
    pub fn rows(&self) -> usize {
        self.factor.nrows()
    }

    pub fn cols(&self) -> usize {
        self.factor.ncols()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Squared Euclidean norm of each row, i.e. the diagonal of `Φ Φᵀ`.
    pub fn row_norms_squared(&self) -> Vec<f64> {
        self.factor
            .row_iter()
            .map(|r| r.norm_squared())
            .collect()
    }

    pub fn from_matrix(factor: DMatrix<f64>) -> Self {
        FeatureFactorization { factor }
    }
}

/// `Φ = V_r Λ_r^{1/2}` over the eigenpairs above `RANK_TOL · λ_max`.
pub fn factorize(k: &KernelMatrix) -> FeatureFactorization {
    let r = k.numerical_rank();
    let factor = linalg::scale_columns(&k.eigen.vectors.columns(0, r).into_owned(), |c| {
        k.eigen.values[c].sqrt()
    });
    FeatureFactorization { factor }
}

/// Kernel over the column-major vectorized entries of an `N × L` grid.
///
/// The Kronecker form never materializes the `NL × NL` matrix: entry
/// `((i, j), (i', j'))` is `K_w[i, i'] · K_h[j, j']`.
#[derive(Clone, Debug)]
pub enum GridKernel {
    Dense {
        kernel: Arc<KernelMatrix>,
        n_rows: usize,
    },
    Kronecker {
        kh: Arc<KernelMatrix>,
        kw: Arc<KernelMatrix>,
    },
}

impl GridKernel {
    pub fn dense(kernel: Arc<KernelMatrix>, n_rows: usize) -> Result<Self> {
        if n_rows == 0 || !kernel.dim().is_multiple_of(n_rows) {
            return Err(Error::DimensionMismatch(format!(
                "kernel of dimension {} does not tile a grid with {} rows",
                kernel.dim(),
                n_rows
            )));
        }
        Ok(GridKernel::Dense { kernel, n_rows })
    }

    pub fn kronecker(kh: Arc<KernelMatrix>, kw: Arc<KernelMatrix>) -> Self {
        GridKernel::Kronecker { kh, kw }
    }

    pub fn n_rows(&self) -> usize {
        match self {
            GridKernel::Dense { n_rows, .. } => *n_rows,
            GridKernel::Kronecker { kw, .. } => kw.dim(),
        }
    }

    pub fn n_cols(&self) -> usize {
        match self {
            GridKernel::Dense { kernel, n_rows } => kernel.dim() / n_rows,
            GridKernel::Kronecker { kh, .. } => kh.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_rows() * self.n_cols()
    }

    pub fn entry(&self, a: Entry, b: Entry) -> f64 {
        match self {
            GridKernel::Dense { kernel, n_rows } => {
                kernel.entries[(vec_index(a, *n_rows), vec_index(b, *n_rows))]
            }
            GridKernel::Kronecker { kh, kw } => kw.entries[(a.0, b.0)] * kh.entries[(a.1, b.1)],
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            GridKernel::Dense { kernel, .. } => kernel.trace(),
            GridKernel::Kronecker { kh, kw } => kh.trace() * kw.trace(),
        }
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.trace() / self.dim() as f64
    }

    pub fn lambda_max(&self) -> f64 {
        match self {
            GridKernel::Dense { kernel, .. } => kernel.lambda_max(),
            GridKernel::Kronecker { kh, kw } => kh.lambda_max() * kw.lambda_max(),
        }
    }

    /// `K_f[rows, cols]` for two lists of grid entries.
    pub fn submatrix(&self, rows: &[Entry], cols: &[Entry]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.entry(rows[a], cols[b]))
    }

    /// `unvec(K_f Sᵀ c)`: the full grid spanned by coefficients `c` placed on `support`.
    pub fn expand(&self, support: &[Entry], coeffs: &DVector<f64>) -> DMatrix<f64> {
        let (n, l) = (self.n_rows(), self.n_cols());
        match self {
            GridKernel::Kronecker { kh, kw } => {
                let m = support.len();
                let left = DMatrix::from_fn(n, m, |i, k| coeffs[k] * kw.entries[(i, support[k].0)]);
                let right = DMatrix::from_fn(l, m, |j, k| kh.entries[(j, support[k].1)]);
                left * right.transpose()
            }
            GridKernel::Dense { kernel, n_rows } => {
                let mut f = DVector::zeros(n * l);
                for (k, &e) in support.iter().enumerate() {
                    f.axpy(coeffs[k], &kernel.entries.column(vec_index(e, *n_rows)), 1.0);
                }
                DMatrix::from_column_slice(n, l, f.as_slice())
            }
        }
    }

    /// `(K_f Sᵀ c)` evaluated only at `targets`.
    pub fn expand_at(&self, support: &[Entry], coeffs: &DVector<f64>, targets: &[Entry]) -> DVector<f64> {
        let cross = self.submatrix(targets, support);
        cross * coeffs
    }
}
