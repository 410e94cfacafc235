//! Transductive Rademacher complexity (TRC) of the completion hypothesis
//! classes, their analytic bounds, and the transductive generalization-error
//! bound built on them.
//!
//! Every class here is a symmetric set, so the supremum of `σᵀ vec(F)` over
//! the class has a closed form. Monte-Carlo estimates are therefore exact
//! per draw and only the expectation over signs is sampled.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{FeatureFactorization, GridKernel, KernelMatrix};
use crate::linalg::{self, SymEigen};
use crate::rng;
use crate::sampling::{Entry, SampleSplit};

/// Eigenvalues of `K̄_f` at or below this fraction of the largest are treated as zero.
pub const PINV_REL_TOL: f64 = 1e-12;

/// Number of Monte-Carlo sign draws when none is given.
pub const DEFAULT_DRAWS: usize = 200;

/// Largest `n` for which all `2ⁿ` sign vectors may be enumerated.
pub const MAX_ENUMERATION: usize = 20;

const DRAW_STREAM: u64 = 0x7AC;

/// A hypothesis class together with its radius.
///
/// `Inductive` radii bound the squared Frobenius norms `‖A_w‖²_F ≤ t_w` and
/// `‖A_h‖²_F ≤ t_h`.
#[derive(Clone, Debug)]
pub enum HypothesisClassSpec {
    /// `{F : ‖F‖_* ≤ t}`.
    BaseMc { t: f64 },
    /// `{K_w B Cᵀ K_h : tr(Bᵀ K_w B) + tr(Cᵀ K_h C) ≤ t_b}`.
    KernelMc {
        t_b: f64,
        kw: Arc<KernelMatrix>,
        kh: Arc<KernelMatrix>,
    },
    /// `{Φ_w A_w A_hᵀ Φ_hᵀ : ‖A_w‖²_F ≤ t_w, ‖A_h‖²_F ≤ t_h}`.
    Inductive {
        t_w: f64,
        t_h: f64,
        phi_w: Arc<FeatureFactorization>,
        phi_h: Arc<FeatureFactorization>,
    },
    /// `{unvec(K_f Sᵀ d̄) : d̄ᵀ K̄_f d̄ ≤ b²}` with `S` selecting the training entries.
    Kkmcex { b: f64, kf: GridKernel },
}

impl HypothesisClassSpec {
    pub fn name(&self) -> &'static str {
        match self {
            HypothesisClassSpec::BaseMc { .. } => "basemc",
            HypothesisClassSpec::KernelMc { .. } => "kernelmc",
            HypothesisClassSpec::Inductive { .. } => "inductive",
            HypothesisClassSpec::Kkmcex { .. } => "kkmcex",
        }
    }

    /// Radii as `key=value` pairs joined by `;`.
    pub fn params(&self) -> String {
        match self {
            HypothesisClassSpec::BaseMc { t } => format!("t={t}"),
            HypothesisClassSpec::KernelMc { t_b, .. } => format!("t_b={t_b}"),
            HypothesisClassSpec::Inductive { t_w, t_h, .. } => format!("t_w={t_w};t_h={t_h}"),
            HypothesisClassSpec::Kkmcex { b, .. } => format!("b={b}"),
        }
    }

    fn radii(&self) -> Vec<(&'static str, f64)> {
        match self {
            HypothesisClassSpec::BaseMc { t } => vec![("t", *t)],
            HypothesisClassSpec::KernelMc { t_b, .. } => vec![("t_b", *t_b)],
            HypothesisClassSpec::Inductive { t_w, t_h, .. } => vec![("t_w", *t_w), ("t_h", *t_h)],
            HypothesisClassSpec::Kkmcex { b, .. } => vec![("b", *b)],
        }
    }

    /// Checks the radii and that every referenced kernel or feature map fits the split's grid.
    ///
    /// Radii must be non-negative; a zero radius gives the trivial class `{0}`.
    pub fn validate(&self, split: &SampleSplit) -> Result<()> {
        for (name, r) in self.radii() {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidParameter(format!("radius {name} must be finite and non-negative, got {r}")));
            }
        }
        let (n, l) = (split.n_rows(), split.n_cols());
        let dims = match self {
            HypothesisClassSpec::BaseMc { .. } => None,
            HypothesisClassSpec::KernelMc { kw, kh, .. } => Some((kw.dim(), kh.dim())),
            HypothesisClassSpec::Inductive { phi_w, phi_h, .. } => Some((phi_w.rows(), phi_h.rows())),
            HypothesisClassSpec::Kkmcex { kf, .. } => Some((kf.n_rows(), kf.n_cols())),
        };
        match dims {
            Some((a, b)) if (a, b) != (n, l) => Err(Error::DimensionMismatch(format!(
                "{} class covers a {a}x{b} grid but the split is {n}x{l}",
                self.name()
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for HypothesisClassSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.params())
    }
}

/// Rademacher signs on `S_n`, ordered as [`SampleSplit::all`] (training entries first).
#[derive(Clone, Debug, PartialEq)]
pub struct RademacherDraw {
    sigma: DVector<f64>,
}

impl RademacherDraw {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(bad) = sigma.iter().find(|&&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidParameter(format!("Rademacher signs must be ±1, got {bad}")));
        }
        Ok(RademacherDraw {
            sigma: DVector::from_vec(sigma),
        })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        RademacherDraw {
            sigma: DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }),
        }
    }

    /// The `index`-th of the `2ⁿ` sign vectors; bit `k` set means `σ_k = −1`.
    pub fn enumerated(n: usize, index: u64) -> Self {
        RademacherDraw {
            sigma: DVector::from_fn(n, |k, _| if (index >> k) & 1 == 1 { -1.0 } else { 1.0 }),
        }
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrcResult {
    /// `q` times the mean supremum over the draws.
    pub estimate: f64,
    /// `q` times the sample standard deviation over `√draws`.
    pub std_error: f64,
    pub draws: usize,
    /// Analytic bound for the same class (universal constant taken as 1).
    pub bound: Option<f64>,
}

/// A class specialized to one split, so each draw costs one small dense product.
///
/// The three factor classes reduce to `scale · ‖Aᵀ diag(σ) B‖₂`, where row `k`
/// of `A` (`B`) is the row (column) map evaluated at entry `k` of `S_n`.
/// `A` and `B` are replaced by thin factors of `AAᵀ` and `BBᵀ`, which keeps
/// the singular values and bounds the product by `n × n`.
/// KKMCEX reduces to `b · ‖P σ‖` with `P = Λ^{-1/2} Vᵀ K_f[S_m, S_n]`.
#[derive(Clone, Debug)]
pub struct PreparedClass {
    q: f64,
    n: usize,
    kind: Prepared,
}

#[derive(Clone, Debug)]
enum Prepared {
    Spectral {
        scale: f64,
        left: DMatrix<f64>,
        right: DMatrix<f64>,
    },
    Whitened {
        b: f64,
        p: DMatrix<f64>,
    },
}

/// An `n × r` matrix `L` with `L Lᵀ = A Aᵀ`, keeping whichever of `A` and the
/// Gram factor has fewer columns.
fn thin_factor(a: DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() <= a.nrows() {
        return a;
    }
    let eig = SymEigen::new(&(&a * a.transpose()));
    let r = eig.rank(1e-14);
    linalg::scale_columns(&eig.vectors.columns(0, r).into_owned(), |c| eig.values[c].sqrt())
}

/// One-hot rows mapping each entry index to its position among the distinct indices.
fn one_hot(indices: &[usize]) -> DMatrix<f64> {
    let mut distinct = indices.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut out = DMatrix::zeros(indices.len(), distinct.len());
    for (k, i) in indices.iter().enumerate() {
        let pos = distinct.binary_search(i).expect("index is present");
        out[(k, pos)] = 1.0;
    }
    out
}

fn rows_at(m: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(indices.len(), m.ncols(), |k, c| m[(indices[k], c)])
}

/// Whitening map for the KKMCEX class and the support it was built on.
fn kkmcex_whitened(kf: &GridKernel, train: &[Entry], targets: &[Entry]) -> DMatrix<f64> {
    let kbar = kf.submatrix(train, train);
    let white = SymEigen::new(&kbar).pinv_sqrt_rows(PINV_REL_TOL);
    white * kf.submatrix(train, targets)
}

impl PreparedClass {
    pub fn new(class: &HypothesisClassSpec, split: &SampleSplit) -> Result<Self> {
        class.validate(split)?;
        let entries = split.all_entries();
        let rows: Vec<usize> = entries.iter().map(|e| e.0).collect();
        let cols: Vec<usize> = entries.iter().map(|e| e.1).collect();
        let kind = match class {
            HypothesisClassSpec::BaseMc { t } => Prepared::Spectral {
                scale: *t,
                left: one_hot(&rows),
                right: one_hot(&cols),
            },
            HypothesisClassSpec::KernelMc { t_b, kw, kh } => Prepared::Spectral {
                scale: t_b / 2.0,
                left: thin_factor(rows_at(&kw.sqrt(), &rows)),
                right: thin_factor(rows_at(&kh.sqrt(), &cols)),
            },
            HypothesisClassSpec::Inductive { t_w, t_h, phi_w, phi_h } => Prepared::Spectral {
                scale: (t_w * t_h).sqrt(),
                left: thin_factor(rows_at(phi_w.factor(), &rows)),
                right: thin_factor(rows_at(phi_h.factor(), &cols)),
            },
            HypothesisClassSpec::Kkmcex { b, kf } => Prepared::Whitened {
                b: *b,
                p: kkmcex_whitened(kf, split.train(), &entries),
            },
        };
        Ok(PreparedClass {
            q: split.q(),
            n: entries.len(),
            kind,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Exact supremum of `σᵀ vec(F)` over the class.
    pub fn sup(&self, draw: &RademacherDraw) -> Result<f64> {
        if draw.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "draw has {} signs but S_n has {} entries",
                draw.len(),
                self.n
            )));
        }
        let sigma = draw.sigma();
        Ok(match &self.kind {
            Prepared::Spectral { scale, left, right } => {
                if *scale == 0.0 {
                    return Ok(0.0);
                }
                let mut weighted = right.clone();
                for (k, mut row) in weighted.row_iter_mut().enumerate() {
                    row *= sigma[k];
                }
                scale * linalg::spectral_norm(&(left.transpose() * weighted))
            }
            Prepared::Whitened { b, p } => b * (p * sigma).norm(),
        })
    }

    /// `trace(S_n K_f Sᵀ K̄_f⁺ S K_f S_nᵀ)` for KKMCEX, `None` for other classes.
    pub fn kkmcex_trace_term(&self) -> Option<f64> {
        match &self.kind {
            Prepared::Whitened { p, .. } => Some(p.norm_squared()),
            Prepared::Spectral { .. } => None,
        }
    }
}

/// Exact supremum of `σᵀ vec(F)` over `class` for one sign draw.
pub fn sup_correlation(class: &HypothesisClassSpec, split: &SampleSplit, draw: &RademacherDraw) -> Result<f64> {
    PreparedClass::new(class, split)?.sup(draw)
}

fn summarize(q: f64, values: &[f64], bound: Option<f64>) -> TrcResult {
    let draws = values.len();
    let mean = values.iter().sum::<f64>() / draws as f64;
    let std_error = if draws > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        q * (var / draws as f64).sqrt()
    } else {
        0.0
    };
    TrcResult {
        estimate: q * mean,
        std_error,
        draws,
        bound,
    }
}

/// TRC averaged over the given sign draws.
pub fn trc_from_draws(class: &HypothesisClassSpec, split: &SampleSplit, draws: &[RademacherDraw]) -> Result<TrcResult> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("at least one draw is required".into()));
    }
    let prepared = PreparedClass::new(class, split)?;
    let values = draws
        .par_iter()
        .map(|d| prepared.sup(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(prepared.q, &values, Some(trc_bound(class, split)?)))
}

/// Monte-Carlo TRC; draw `k` comes from its own substream, so the result does
/// not depend on scheduling.
pub fn trc_monte_carlo(class: &HypothesisClassSpec, split: &SampleSplit, draws: usize, seed: u64) -> Result<TrcResult> {
    if draws == 0 {
        return Err(Error::InvalidParameter("at least one draw is required".into()));
    }
    let prepared = PreparedClass::new(class, split)?;
    let values = (0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::substream(seed, &[DRAW_STREAM, k as u64]);
            prepared.sup(&RademacherDraw::random(prepared.n, &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(prepared.q, &values, Some(trc_bound(class, split)?)))
}

/// Exact TRC by enumerating all `2ⁿ` sign vectors.
pub fn trc_enumerate(class: &HypothesisClassSpec, split: &SampleSplit) -> Result<TrcResult> {
    let n = split.n();
    if n > MAX_ENUMERATION {
        return Err(Error::InvalidParameter(format!(
            "enumeration needs n <= {MAX_ENUMERATION}, got {n}"
        )));
    }
    let draws: Vec<RademacherDraw> = (0..1u64 << n).map(|i| RademacherDraw::enumerated(n, i)).collect();
    trc_from_draws(class, split, &draws)
}

/// Analytic TRC bound with the universal constant set to 1.
pub fn trc_bound(class: &HypothesisClassSpec, split: &SampleSplit) -> Result<f64> {
    trc_bound_with_constant(class, split, 1.0)
}

/// Analytic TRC bound. `g` is the unspecified universal constant of the
/// nuclear-norm bounds, used only by `BaseMc` and `KernelMc`.
pub fn trc_bound_with_constant(class: &HypothesisClassSpec, split: &SampleSplit, g: f64) -> Result<f64> {
    class.validate(split)?;
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidParameter(format!("universal constant must be positive, got {g}")));
    }
    let q = split.q();
    let size = (split.n_rows() as f64).sqrt() + (split.n_cols() as f64).sqrt();
    Ok(match class {
        HypothesisClassSpec::BaseMc { t } => g * q * t * size,
        HypothesisClassSpec::KernelMc { t_b, kw, kh } => kw.lambda_max().max(kh.lambda_max()) * g * q * t_b * size,
        HypothesisClassSpec::Inductive { t_w, t_h, phi_w, phi_h } => {
            let (nw, nh) = (phi_w.row_norms_squared(), phi_h.row_norms_squared());
            let trace: f64 = split.all().map(|(i, j)| nw[i] * nh[j]).sum();
            q * (t_w * t_h).sqrt() * trace.sqrt()
        }
        HypothesisClassSpec::Kkmcex { b, kf } => {
            q * b * kkmcex_trace_term(kf, split.train(), &split.all_entries()).sqrt()
        }
    })
}

/// `trace(S_n K_f Sᵀ K̄_f⁺ S K_f S_nᵀ)` with `S` selecting `train` and `S_n` selecting `targets`.
pub fn kkmcex_trace_term(kf: &GridKernel, train: &[Entry], targets: &[Entry]) -> f64 {
    kkmcex_whitened(kf, train, targets).norm_squared()
}

/// Settings of the generalization-error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeBoundParams {
    /// Lipschitz constant of the loss.
    pub gamma: f64,
    pub delta: f64,
    /// Universal constant of the nuclear-norm TRC bounds.
    pub g: f64,
    /// Multiplier taking the function-class TRC to the loss-class TRC.
    pub contraction: f64,
}

impl Default for GeBoundParams {
    fn default() -> Self {
        GeBoundParams {
            gamma: 1.0,
            delta: 0.05,
            g: 1.0,
            contraction: 1.0,
        }
    }
}

impl GeBoundParams {
    /// Standard contraction `R(l∘F) ≤ γ R(F)`.
    pub fn standard(gamma: f64, delta: f64) -> Self {
        GeBoundParams {
            gamma,
            delta,
            g: 1.0,
            contraction: gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::InvalidParameter(format!("universal constant must be positive, got {}", self.g)));
        }
        if !(self.contraction >= 0.0 && self.contraction.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "contraction factor must be non-negative, got {}",
                self.contraction
            )));
        }
        Ok(())
    }

    pub fn loss_class_trc(&self, function_class_trc: f64) -> f64 {
        self.contraction * function_class_trc
    }
}

/// `R + 5.05 q √min(m, u) + √(2 q ln(1/δ))` for a loss-class TRC `R`.
pub fn ge_bound(trc_of_loss_class: f64, split: &SampleSplit, params: &GeBoundParams) -> Result<f64> {
    params.validate()?;
    if split.m() == 0 || split.u() == 0 {
        return Err(Error::Precondition("the bound needs non-empty training and test sets".into()));
    }
    let q = split.q();
    let min = split.m().min(split.u()) as f64;
    Ok(trc_of_loss_class + 5.05 * q * min.sqrt() + (2.0 * q * (1.0 / params.delta).ln()).sqrt())
}

/// Mean square losses on both sets and their difference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeneralizationError {
    pub train_loss: f64,
    pub test_loss: f64,
    /// `test_loss − train_loss`.
    pub ge: f64,
}

fn mean_square_loss(m: &DMatrix<f64>, f_hat: &DMatrix<f64>, entries: &[Entry]) -> f64 {
    entries.iter().map(|&e| (m[e] - f_hat[e]).powi(2)).sum::<f64>() / entries.len() as f64
}

pub fn generalization_error(m: &DMatrix<f64>, f_hat: &DMatrix<f64>, split: &SampleSplit) -> Result<GeneralizationError> {
    let grid = (split.n_rows(), split.n_cols());
    if m.shape() != grid || f_hat.shape() != grid {
        return Err(Error::DimensionMismatch(format!(
            "matrices are {:?} and {:?} but the grid is {:?}",
            m.shape(),
            f_hat.shape(),
            grid
        )));
    }
    if split.m() == 0 || split.u() == 0 {
        return Err(Error::NoData);
    }
    let train_loss = mean_square_loss(m, f_hat, split.train());
    let test_loss = mean_square_loss(m, f_hat, split.test());
    Ok(GeneralizationError {
        train_loss,
        test_loss,
        ge: test_loss - train_loss,
    })
}

/// One output row of a TRC evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrcRecord {
    pub class: String,
    pub kind_params: String,
    #[serde(rename = "N")]
    pub n_rows: usize,
    #[serde(rename = "L")]
    pub n_cols: usize,
    pub m: usize,
    pub u: usize,
    pub draws: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub bound: Option<f64>,
}

impl TrcRecord {
    pub fn new(class: &HypothesisClassSpec, split: &SampleSplit, result: &TrcResult) -> Self {
        TrcRecord {
            class: class.name().into(),
            kind_params: class.params(),
            n_rows: split.n_rows(),
            n_cols: split.n_cols(),
            m: split.m(),
            u: split.u(),
            draws: result.draws,
            estimate: result.estimate,
            std_error: result.std_error,
            bound: result.bound,
        }
    }
}
