//! Completion algorithms: base MC and kernel MC by alternating least squares,
//! and the closed-form Kronecker kernel ridge solver (KKMCEX).

mod als;
mod kkmcex;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{FeatureFactorization, GridKernel, KernelMatrix};
use crate::sampling::{ObservationVector, SampleSplit};

pub use als::{kmc_als_fit, mc_als_fit};
pub use kkmcex::{kkmcex_fit, kkmcex_predict, kkmcex_predict_at, KkmcexModel};

/// Alternating least squares controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlsConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the objective over one full
    /// iteration drops below this value.
    pub tol: f64,
    pub seed: u64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            max_iters: 500,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Bilinear model `F = W Hᵀ`, optionally with kernel coefficients
/// `W = K_w B`, `H = K_h C`.
#[derive(Clone, Debug)]
pub struct FactorModel {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub b: Option<DMatrix<f64>>,
    pub c: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn complete(&self) -> DMatrix<f64> {
        &self.w * self.h.transpose()
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Factor(FactorModel),
    Kkmcex(KkmcexModel),
}

/// A full recovered matrix and the model that produced it.
#[derive(Clone, Debug)]
pub struct CompletionEstimate {
    pub f_hat: DMatrix<f64>,
    pub model: Model,
    /// Objective after each full ALS iteration; empty for KKMCEX.
    pub objective_trace: Vec<f64>,
    /// Objective after every half-step (W update, then H update); empty for KKMCEX.
    pub half_step_trace: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Mc,
    Kmc,
    Kkmcex,
}

impl SolverKind {
    pub const ALL: [SolverKind; 3] = [SolverKind::Mc, SolverKind::Kmc, SolverKind::Kkmcex];

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Mc => "mc",
            SolverKind::Kmc => "kmc",
            SolverKind::Kkmcex => "kkmcex",
        }
    }

    /// Whether the regularization weight follows the kernel trace across sizes.
    pub fn uses_kernels(&self) -> bool {
        !matches!(self, SolverKind::Mc)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(SolverKind::Mc),
            "kmc" => Ok(SolverKind::Kmc),
            "kkmcex" => Ok(SolverKind::Kkmcex),
            other => Err(Error::InvalidParameter(format!(
                "unknown solver `{other}` (expected mc, kmc or kkmcex)"
            ))),
        }
    }
}

/// Row and column kernels for the prior-informed solvers.
#[derive(Clone, Debug)]
pub struct SideInformation {
    pub kw: Arc<KernelMatrix>,
    pub kh: Arc<KernelMatrix>,
}

impl SideInformation {
    pub fn new(kw: Arc<KernelMatrix>, kh: Arc<KernelMatrix>) -> Self {
        SideInformation { kw, kh }
    }

    /// `K_f = K_h ⊗ K_w` in lazy form.
    pub fn grid_kernel(&self) -> GridKernel {
        GridKernel::kronecker(self.kh.clone(), self.kw.clone())
    }
}

/// Everything a solver run needs besides the observations.
#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub rank: usize,
    pub mu: f64,
    pub als: AlsConfig,
}

/// Fit `kind` and return the completed matrix.
pub fn complete(
    kind: SolverKind,
    obs: &ObservationVector,
    split: &SampleSplit,
    side: Option<&SideInformation>,
    settings: &SolverSettings,
) -> Result<CompletionEstimate> {
    let need_side = || {
        side.ok_or_else(|| Error::InvalidParameter(format!("solver {kind} needs row and column kernels")))
    };
    match kind {
        SolverKind::Mc => mc_als_fit(obs, split, settings.rank, settings.mu, &settings.als),
        SolverKind::Kmc => {
            let side = need_side()?;
            kmc_als_fit(obs, split, &side.kw, &side.kh, settings.rank, settings.mu, &settings.als)
        }
        SolverKind::Kkmcex => {
            let side = need_side()?;
            let model = kkmcex_fit(obs, split, &side.grid_kernel(), settings.mu)?;
            Ok(kkmcex_predict(&model))
        }
    }
}

/// Which objective to evaluate, with the kernels it depends on.
#[derive(Clone, Copy, Debug)]
pub enum ObjectiveKind<'a> {
    /// `‖P(M − W Hᵀ)‖² + μ(‖W‖² + ‖H‖²)`.
    BaseMc,
    /// `‖P(M − W Hᵀ)‖² + μ(tr(Wᵀ K_w⁺ W) + tr(Hᵀ K_h⁺ H))`.
    KernelMc {
        kw: &'a KernelMatrix,
        kh: &'a KernelMatrix,
    },
    /// `‖P(M − Φ_w A_w A_hᵀ Φ_hᵀ)‖² + μ(‖A_w‖² + ‖A_h‖²)`.
    FeatureMc {
        phi_w: &'a FeatureFactorization,
        phi_h: &'a FeatureFactorization,
    },
    /// `‖m̄ − K̄_f d̄‖² + μ d̄ᵀ K̄_f d̄`.
    Kkmcex { kf: &'a GridKernel },
}

#[derive(Clone, Copy, Debug)]
pub enum SolverState<'a> {
    Factors {
        w: &'a DMatrix<f64>,
        h: &'a DMatrix<f64>,
    },
    Coefficients {
        dbar: &'a DVector<f64>,
    },
}

fn data_term(obs: &ObservationVector, split: &SampleSplit, f: &DMatrix<f64>) -> Result<f64> {
    obs.check(split)?;
    if f.shape() != (split.n_rows(), split.n_cols()) {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}x{} but the grid is {}x{}",
            f.nrows(),
            f.ncols(),
            split.n_rows(),
            split.n_cols()
        )));
    }
    Ok(split
        .train()
        .iter()
        .zip(obs.values().iter())
        .map(|(&e, y)| (y - f[e]).powi(2))
        .sum())
}

fn check_factor_shapes(w: &DMatrix<f64>, h: &DMatrix<f64>, split: &SampleSplit) -> Result<()> {
    if w.nrows() != split.n_rows() || h.nrows() != split.n_cols() || w.ncols() != h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "factors {}x{} and {}x{} do not fit a {}x{} grid",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols(),
            split.n_rows(),
            split.n_cols()
        )));
    }
    Ok(())
}

/// Exact objective value of the chosen formulation at `state`.
pub fn objective_eval(
    kind: ObjectiveKind<'_>,
    state: SolverState<'_>,
    obs: &ObservationVector,
    split: &SampleSplit,
    mu: f64,
) -> Result<f64> {
    match (kind, state) {
        (ObjectiveKind::BaseMc, SolverState::Factors { w, h }) => {
            check_factor_shapes(w, h, split)?;
            let fit = data_term(obs, split, &(w * h.transpose()))?;
            Ok(fit + mu * (w.norm_squared() + h.norm_squared()))
        }
        (ObjectiveKind::KernelMc { kw, kh }, SolverState::Factors { w, h }) => {
            check_factor_shapes(w, h, split)?;
            if kw.dim() != split.n_rows() || kh.dim() != split.n_cols() {
                return Err(Error::DimensionMismatch("kernel sizes do not match the grid".into()));
            }
            let fit = data_term(obs, split, &(w * h.transpose()))?;
            Ok(fit + mu * (kw.pinv_energy(w) + kh.pinv_energy(h)))
        }
        (ObjectiveKind::FeatureMc { phi_w, phi_h }, SolverState::Factors { w: a_w, h: a_h }) => {
            if a_w.nrows() != phi_w.cols() || a_h.nrows() != phi_h.cols() || a_w.ncols() != a_h.ncols() {
                return Err(Error::DimensionMismatch(
                    "feature coefficients do not match the feature maps".into(),
                ));
            }
            let f = phi_w.factor() * a_w * a_h.transpose() * phi_h.factor().transpose();
            let fit = data_term(obs, split, &f)?;
            Ok(fit + mu * (a_w.norm_squared() + a_h.norm_squared()))
        }
        (ObjectiveKind::Kkmcex { kf }, SolverState::Coefficients { dbar }) => {
            obs.check(split)?;
            if dbar.len() != split.m() {
                return Err(Error::DimensionMismatch(format!(
                    "{} coefficients for {} observations",
                    dbar.len(),
                    split.m()
                )));
            }
            let kbar = kf.submatrix(split.train(), split.train());
            let fitted = &kbar * dbar;
            Ok((obs.values() - &fitted).norm_squared() + mu * dbar.dot(&fitted))
        }
        _ => Err(Error::InvalidParameter(
            "objective kind does not match the solver state".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_without_observations_is_zero() {
        let split = SampleSplit::new(2, 2, vec![], vec![(0, 0)]).unwrap();
        let obs = ObservationVector::new(&split, DVector::zeros(0)).unwrap();
        let w = DMatrix::zeros(2, 1);
        let h = DMatrix::zeros(2, 1);
        let v = objective_eval(ObjectiveKind::BaseMc, SolverState::Factors { w: &w, h: &h }, &obs, &split, 1.0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn kind_state_mismatch_is_rejected() {
        let split = SampleSplit::new(1, 1, vec![(0, 0)], vec![]).unwrap();
        let obs = ObservationVector::new(&split, DVector::from_vec(vec![1.0])).unwrap();
        let d = DVector::zeros(1);
        let err = objective_eval(ObjectiveKind::BaseMc, SolverState::Coefficients { dbar: &d }, &obs, &split, 1.0);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn solver_kind_round_trips() {
        for kind in SolverKind::ALL {
            assert_eq!(kind.name().parse::<SolverKind>().unwrap(), kind);
        }
        assert!("svt".parse::<SolverKind>().is_err());
    }
}
