use nalgebra::{DMatrix, DVector};

use super::{CompletionEstimate, Model};
use crate::error::{Error, Result};
use crate::kernels::GridKernel;
use crate::linalg::solve_spd;
use crate::sampling::{scatter, Entry, ObservationVector, SampleSplit};

/// Fitted kernel ridge coefficients over the training entries.
#[derive(Clone, Debug)]
pub struct KkmcexModel {
    /// `d̄`, one coefficient per training entry.
    pub dbar: DVector<f64>,
    pub mu: f64,
    pub kernel: GridKernel,
    /// Training entries in the order `d̄` is aligned with.
    pub support: Vec<Entry>,
    /// `‖(K̄_f + μI) d̄ − m̄‖ / ‖m̄‖` after the solve.
    pub relative_residual: f64,
    /// Set when the Cholesky factorization failed and the eigen route was used.
    pub used_fallback: bool,
}

impl KkmcexModel {
    /// `d̂ = Sᵀ d̄` laid out on the grid.
    pub fn full_coefficients(&self) -> DMatrix<f64> {
        scatter(&self.dbar, &self.support, self.kernel.n_rows(), self.kernel.n_cols())
            .expect("support lies on the kernel grid")
    }
}

/// Solve `(K̄_f + μI) d̄ = m̄` where `K̄_f = S K_f Sᵀ` is the kernel restricted
/// to the training entries.
pub fn kkmcex_fit(
    obs: &ObservationVector,
    split: &SampleSplit,
    kf: &GridKernel,
    mu: f64,
) -> Result<KkmcexModel> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::SingularityRisk(mu));
    }
    obs.check(split)?;
    if split.m() == 0 {
        return Err(Error::NoData);
    }
    if kf.n_rows() != split.n_rows() || kf.n_cols() != split.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "kernel grid is {}x{} but the split grid is {}x{}",
            kf.n_rows(),
            kf.n_cols(),
            split.n_rows(),
            split.n_cols()
        )));
    }
    let mut system = kf.submatrix(split.train(), split.train());
    for k in 0..split.m() {
        system[(k, k)] += mu;
    }
    let sol = solve_spd(&system, obs.values());
    if !sol.x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("KKMCEX solve produced non-finite coefficients".into()));
    }
    Ok(KkmcexModel {
        dbar: sol.x,
        mu,
        kernel: kf.clone(),
        support: split.train().to_vec(),
        relative_residual: sol.relative_residual,
        used_fallback: sol.used_fallback,
    })
}

/// `F̂ = unvec(K_f Sᵀ d̄)` over the whole grid.
pub fn kkmcex_predict(model: &KkmcexModel) -> CompletionEstimate {
    CompletionEstimate {
        f_hat: model.kernel.expand(&model.support, &model.dbar),
        model: Model::Kkmcex(model.clone()),
        objective_trace: Vec::new(),
        half_step_trace: Vec::new(),
    }
}

/// Entries of `F̂` at `targets` only.
pub fn kkmcex_predict_at(model: &KkmcexModel, targets: &[Entry]) -> DVector<f64> {
    model.kernel.expand_at(&model.support, &model.dbar, targets)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::kernels::KernelMatrix;

    fn worked_example() -> (SampleSplit, ObservationVector, GridKernel) {
        let kh = KernelMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])).unwrap();
        let kw = KernelMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let kf = GridKernel::kronecker(Arc::new(kh), Arc::new(kw));
        // vec positions 0 and 1 are entries (0,0) and (1,0)
        let split = SampleSplit::new(2, 2, vec![(0, 0), (1, 0)], vec![(0, 1), (1, 1)]).unwrap();
        let obs = ObservationVector::new(&split, DVector::from_vec(vec![3.0, 3.0])).unwrap();
        (split, obs, kf)
    }

    #[test]
    fn hand_computed_coefficients_and_prediction() {
        let (split, obs, kf) = worked_example();
        let model = kkmcex_fit(&obs, &split, &kf, 1.0).unwrap();
        assert!((model.dbar[0] - 0.75).abs() < 1e-15);
        assert!((model.dbar[1] - 0.75).abs() < 1e-15);
        let est = kkmcex_predict(&model);
        let expected = DMatrix::from_row_slice(2, 2, &[2.25, 0.0, 2.25, 0.0]);
        assert!((est.f_hat - expected).norm() < 1e-14);
    }

    #[test]
    fn zero_observations_give_zero_coefficients() {
        let (split, _, kf) = worked_example();
        let obs = ObservationVector::new(&split, DVector::zeros(2)).unwrap();
        let model = kkmcex_fit(&obs, &split, &kf, 0.5).unwrap();
        assert_eq!(model.dbar, DVector::zeros(2));
        assert_eq!(kkmcex_predict(&model).f_hat, DMatrix::zeros(2, 2));
    }

    #[test]
    fn training_fit_is_ridge_smoothed() {
        let (split, obs, kf) = worked_example();
        let mu = 0.3;
        let model = kkmcex_fit(&obs, &split, &kf, mu).unwrap();
        let f = kkmcex_predict(&model).f_hat;
        for (k, &e) in split.train().iter().enumerate() {
            let smoothed = obs.values()[k] - mu * model.dbar[k];
            assert!((f[e] - smoothed).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_nonpositive_mu_and_empty_training() {
        let (split, obs, kf) = worked_example();
        assert!(matches!(kkmcex_fit(&obs, &split, &kf, 0.0), Err(Error::SingularityRisk(_))));
        assert!(matches!(kkmcex_fit(&obs, &split, &kf, -1.0), Err(Error::SingularityRisk(_))));
        let empty = SampleSplit::new(2, 2, vec![], vec![(0, 0)]).unwrap();
        let none = ObservationVector::new(&empty, DVector::zeros(0)).unwrap();
        assert!(matches!(kkmcex_fit(&none, &empty, &kf, 1.0), Err(Error::NoData)));
    }
}
