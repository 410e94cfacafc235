//! Synthetic GE-versus-size experiments: data generation, regularization
//! selection by cross-validation, and per-size aggregation over realizations.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{generalization_error, GeneralizationError};
use crate::error::{Error, Result};
use crate::kernels::{build_dft_kernel, DftKernelSpec, GridKernel, KernelMatrix, WeightProfile};
use crate::rng;
use crate::sampling::{uniform_split_with, ObservationVector, SampleSplit};
use crate::solvers::{complete, AlsConfig, SideInformation, SolverKind, SolverSettings};

const FACTOR_STREAM: u64 = 0xB0C;
const NOISE_STREAM: u64 = 0x4015E;
const SPLIT_STREAM: u64 = 0x5B1;
const ALS_STREAM: u64 = 0xA15;
const FOLD_STREAM: u64 = 0xF01D;

/// Ground truth, noise, and observed matrix of one synthetic realization.
#[derive(Clone, Debug)]
pub struct SyntheticInstance {
    pub f: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// `F + E`.
    pub m: DMatrix<f64>,
    pub p: usize,
    /// Target `‖F‖²_F / ‖E‖²_F`; infinite means noiseless.
    pub snr: f64,
    /// Factor `F` was multiplied by after `K_w B Cᵀ K_h` (1 when not normalized).
    pub signal_scale: f64,
    pub seed: u64,
}

/// Draw `F = K_w B Cᵀ K_h` with standard Gaussian `B`, `C` of width `p`, then
/// add Gaussian noise rescaled so the power ratio is exactly `snr`.
///
/// With `normalize` the signal is first rescaled to unit mean-square entry,
/// which keeps losses comparable across sizes.
pub fn generate_synthetic(
    kw: &KernelMatrix,
    kh: &KernelMatrix,
    p: usize,
    snr: f64,
    normalize: bool,
    seed: u64,
) -> Result<SyntheticInstance> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    if !(snr > 0.0) {
        return Err(Error::InvalidParameter(format!("snr must be positive, got {snr}")));
    }
    let (n, l) = (kw.dim(), kh.dim());
    let mut rng = rng::substream(seed, &[FACTOR_STREAM]);
    let b = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let c = DMatrix::<f64>::from_fn(l, p, |_, _| StandardNormal.sample(&mut rng));
    let mut f = (kw.entries() * b) * (c.transpose() * kh.entries());
    let mut signal_scale = 1.0;
    if normalize {
        let rms = (f.norm_squared() / (n * l) as f64).sqrt();
        if rms > 0.0 {
            signal_scale = 1.0 / rms;
            f *= signal_scale;
        }
    }
    let e = if snr.is_infinite() {
        DMatrix::zeros(n, l)
    } else {
        let mut rng = rng::substream(seed, &[NOISE_STREAM]);
        let raw = DMatrix::<f64>::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
        let gain = (f.norm_squared() / snr / raw.norm_squared()).sqrt();
        raw * gain
    };
    Ok(SyntheticInstance {
        m: &f + &e,
        f,
        e,
        p,
        snr,
        signal_scale,
        seed,
    })
}

/// Square DFT kernel of size `n` with the given weight profile.
pub fn dft_kernel(n: usize, profile: WeightProfile) -> Result<KernelMatrix> {
    build_dft_kernel(&DftKernelSpec::from_profile(n, profile)?)
}

/// `μ_ref` rescaled by the ratio of mean diagonals of the new and reference kernels.
pub fn scale_mu(mu_ref: f64, kf_ref: &GridKernel, kf_new: &GridKernel) -> Result<f64> {
    let (a, b) = (kf_ref.mean_diagonal(), kf_new.mean_diagonal());
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel mean diagonals must be positive, got {a} and {b}"
        )));
    }
    Ok(mu_ref * b / a)
}

/// Pick the grid value with the lowest mean held-out square loss over
/// `folds` partitions of the training entries. Ties go to the larger `μ`.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_mu(
    obs: &ObservationVector,
    split: &SampleSplit,
    kind: SolverKind,
    side: Option<&SideInformation>,
    rank: usize,
    als: &AlsConfig,
    mu_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if mu_grid.is_empty() {
        return Err(Error::InvalidParameter("the mu grid is empty".into()));
    }
    if let Some(bad) = mu_grid.iter().find(|&&mu| !(mu > 0.0 && mu.is_finite())) {
        return Err(Error::InvalidParameter(format!("grid values must be positive, got {bad}")));
    }
    if mu_grid.len() == 1 {
        return Ok(mu_grid[0]);
    }
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    obs.check(split)?;
    let m = split.m();
    if m < folds {
        return Err(Error::Precondition(format!(
            "{m} training entries cannot fill {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng::substream(seed, &[FOLD_STREAM]));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; m];
        for (rank_in_order, &k) in order.iter().enumerate() {
            f[k] = rank_in_order % folds;
        }
        f
    };

    let mut best: Option<(f64, f64)> = None;
    for &mu in mu_grid {
        let mut total = 0.0;
        for fold in 0..folds {
            let keep: Vec<usize> = (0..m).filter(|&k| fold_of[k] != fold).collect();
            let held: Vec<usize> = (0..m).filter(|&k| fold_of[k] == fold).collect();
            let sub = SampleSplit::new(
                split.n_rows(),
                split.n_cols(),
                keep.iter().map(|&k| split.train()[k]).collect(),
                held.iter().map(|&k| split.train()[k]).collect(),
            )?;
            let sub_obs = ObservationVector::new(
                &sub,
                nalgebra::DVector::from_iterator(keep.len(), keep.iter().map(|&k| obs.values()[k])),
            )?;
            let settings = SolverSettings { rank, mu, als: *als };
            let est = complete(kind, &sub_obs, &sub, side, &settings)?;
            let loss: f64 = held
                .iter()
                .map(|&k| (est.f_hat[split.train()[k]] - obs.values()[k]).powi(2))
                .sum::<f64>()
                / held.len() as f64;
            total += loss;
        }
        let score = total / folds as f64;
        best = match best {
            Some((s, b)) if s < score || (s == score && b > mu) => Some((s, b)),
            _ => Some((score, mu)),
        };
    }
    Ok(best.expect("grid is non-empty").1)
}

fn default_sizes() -> Vec<usize> {
    vec![100, 200, 400, 800]
}

fn default_mu_grid() -> Vec<f64> {
    (-8..=2).map(|e| 10f64.powi(e)).collect()
}

fn default_solvers() -> Vec<SolverKind> {
    SolverKind::ALL.to_vec()
}

fn default_experiment_als() -> AlsConfig {
    AlsConfig {
        max_iters: 100,
        tol: 1e-6,
        seed: 0,
    }
}

/// Protocol of a GE-versus-size experiment on square synthetic matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sizes: Vec<usize>,
    /// Training entries per realization.
    pub m: usize,
    /// Test entries per realization; all remaining entries when absent.
    pub u: Option<usize>,
    /// Width of the generating factors.
    pub p: usize,
    /// Factorization rank of the ALS solvers; `p` when absent.
    pub rank: Option<usize>,
    /// `‖F‖²_F / ‖E‖²_F`; `inf` for noiseless data.
    pub snr: f64,
    pub realizations: usize,
    pub mu_grid: Vec<f64>,
    pub folds: usize,
    /// Skip cross-validation and use this `μ` at the smallest size.
    pub mu: Option<f64>,
    pub seed: u64,
    pub solvers: Vec<SolverKind>,
    pub kernel: WeightProfile,
    /// Rescale each `F` to unit mean-square entry.
    pub normalize_signal: bool,
    /// Iteration controls of both ALS solvers; the seed field is ignored.
    pub als: AlsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sizes: default_sizes(),
            m: 300,
            u: None,
            p: 10,
            rank: None,
            snr: f64::INFINITY,
            realizations: 50,
            mu_grid: default_mu_grid(),
            folds: 5,
            mu: None,
            seed: 0,
            solvers: default_solvers(),
            kernel: WeightProfile::Harmonic,
            normalize_signal: true,
            als: default_experiment_als(),
        }
    }
}

impl ExperimentConfig {
    pub fn rank(&self) -> usize {
        self.rank.unwrap_or(self.p)
    }

    pub fn test_size(&self, n: usize) -> usize {
        self.u.unwrap_or(n * n - self.m.min(n * n))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if self.sizes.is_empty() {
            return bad("sizes", "at least one size is required".into());
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 2) {
            return bad("sizes", format!("sizes must be at least 2, got {n}"));
        }
        if self.realizations == 0 {
            return bad("realizations", "at least one realization is required".into());
        }
        if self.p == 0 {
            return bad("p", "p must be at least 1".into());
        }
        if self.rank == Some(0) {
            return bad("rank", "rank must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m", "m must be at least 1".into());
        }
        for &n in &self.sizes {
            let u = self.test_size(n);
            if u == 0 || self.m + u > n * n {
                return bad("u", format!("m={} and u={u} do not fit a {n}x{n} grid", self.m));
            }
        }
        if !(self.snr > 0.0) {
            return bad("snr", format!("snr must be positive or inf, got {}", self.snr));
        }
        if self.solvers.is_empty() {
            return bad("solvers", "at least one solver is required".into());
        }
        if self.mu.is_none() {
            if self.mu_grid.is_empty() {
                return bad("mu_grid", "the grid is empty and no mu is given".into());
            }
            if let Some(v) = self.mu_grid.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
                return bad("mu_grid", format!("grid values must be positive, got {v}"));
            }
            if self.mu_grid.len() > 1 && self.folds < 2 {
                return bad("folds", format!("need at least 2 folds, got {}", self.folds));
            }
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("mu", format!("mu must be positive, got {mu}"));
            }
        }
        if self.als.max_iters == 0 {
            return bad("als.max_iters", "at least one iteration is required".into());
        }
        if let WeightProfile::Geometric { ratio } = self.kernel {
            if !(ratio > 0.0 && ratio < 1.0) {
                return bad("kernel.ratio", format!("ratio must lie in (0, 1), got {ratio}"));
            }
        }
        Ok(())
    }
}

/// Aggregated losses of one solver at one size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub solver: SolverKind,
    #[serde(rename = "N")]
    pub n_rows: usize,
    #[serde(rename = "L")]
    pub n_cols: usize,
    pub m: usize,
    pub u: usize,
    pub p: usize,
    pub snr: f64,
    pub mu: f64,
    /// Realizations that completed.
    pub realizations: usize,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub ge_mean: f64,
    pub ge_std: f64,
}

/// A realization that failed; it is left out of the aggregates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MissingCell {
    pub solver: SolverKind,
    #[serde(rename = "N")]
    pub n_rows: usize,
    pub realization: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResults {
    /// Ordered by size, then by the configured solver order.
    pub rows: Vec<ResultRow>,
    pub missing: Vec<MissingCell>,
    /// `μ` used by each solver at the smallest size.
    pub reference_mu: Vec<(SolverKind, f64)>,
}

impl ExperimentResults {
    pub fn row(&self, solver: SolverKind, n: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.solver == solver && r.n_rows == n)
    }
}

struct SizeSetup {
    n: usize,
    side: SideInformation,
    kf: GridKernel,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn instance_seed(seed: u64, size_index: usize, realization: usize) -> u64 {
    rng::derive_seed(seed, &[size_index as u64, realization as u64])
}

/// One realization at one size: instance, split and observations.
fn realization(
    cfg: &ExperimentConfig,
    setup: &SizeSetup,
    size_index: usize,
    r: usize,
) -> Result<(SyntheticInstance, SampleSplit, ObservationVector)> {
    let seed = instance_seed(cfg.seed, size_index, r);
    let inst = generate_synthetic(&setup.side.kw, &setup.side.kh, cfg.p, cfg.snr, cfg.normalize_signal, seed)?;
    let mut split_rng = rng::substream(seed, &[SPLIT_STREAM]);
    let split = uniform_split_with(setup.n, setup.n, cfg.m, cfg.test_size(setup.n), &mut split_rng)?;
    let obs = ObservationVector::from_matrix(&split, &inst.m)?;
    Ok((inst, split, obs))
}

fn als_for(cfg: &ExperimentConfig, seed: u64) -> AlsConfig {
    AlsConfig {
        seed: rng::derive_seed(seed, &[ALS_STREAM]),
        ..cfg.als
    }
}

/// Run every configured solver on `realizations` fresh instances at each size.
///
/// `μ` is chosen once per solver on the first realization of the smallest
/// size and carried to larger sizes by [`scale_mu`] for the kernel solvers.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let setups = cfg
        .sizes
        .iter()
        .map(|&n| {
            let k = Arc::new(dft_kernel(n, cfg.kernel)?);
            let side = SideInformation::new(k.clone(), k);
            let kf = side.grid_kernel();
            Ok(SizeSetup { n, side, kf })
        })
        .collect::<Result<Vec<_>>>()?;

    let reference = &setups[0];
    let (_, ref_split, ref_obs) = realization(cfg, reference, 0, 0)?;
    let reference_mu = cfg
        .solvers
        .iter()
        .map(|&kind| {
            let mu = match cfg.mu {
                Some(mu) => mu,
                None => cross_validate_mu(
                    &ref_obs,
                    &ref_split,
                    kind,
                    Some(&reference.side),
                    cfg.rank(),
                    &als_for(cfg, cfg.seed),
                    &cfg.mu_grid,
                    cfg.folds,
                    cfg.seed,
                )?,
            };
            Ok((kind, mu))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut mus = Vec::with_capacity(setups.len());
    for setup in &setups {
        let row = reference_mu
            .iter()
            .map(|&(kind, mu)| {
                if kind.uses_kernels() {
                    scale_mu(mu, &reference.kf, &setup.kf)
                } else {
                    Ok(mu)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        mus.push(row);
    }

    let cells: Vec<(usize, usize)> = (0..setups.len())
        .flat_map(|s| (0..cfg.realizations).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<Vec<std::result::Result<GeneralizationError, String>>> = cells
        .par_iter()
        .map(|&(s, r)| {
            let setup = &setups[s];
            match realization(cfg, setup, s, r) {
                Err(e) => vec![Err(e.to_string()); cfg.solvers.len()],
                Ok((inst, split, obs)) => cfg
                    .solvers
                    .iter()
                    .enumerate()
                    .map(|(k, &kind)| {
                        let settings = SolverSettings {
                            rank: cfg.rank(),
                            mu: mus[s][k],
                            als: als_for(cfg, inst.seed),
                        };
                        complete(kind, &obs, &split, Some(&setup.side), &settings)
                            .and_then(|est| generalization_error(&inst.m, &est.f_hat, &split))
                            .map_err(|e| e.to_string())
                    })
                    .collect(),
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (s, setup) in setups.iter().enumerate() {
        for (k, &kind) in cfg.solvers.iter().enumerate() {
            let mut done = Vec::new();
            for r in 0..cfg.realizations {
                match &outcomes[s * cfg.realizations + r][k] {
                    Ok(g) => done.push(*g),
                    Err(reason) => missing.push(MissingCell {
                        solver: kind,
                        n_rows: setup.n,
                        realization: r,
                        reason: reason.clone(),
                    }),
                }
            }
            let (train_mean, train_std) = mean_std(&done.iter().map(|g| g.train_loss).collect::<Vec<_>>());
            let (test_mean, test_std) = mean_std(&done.iter().map(|g| g.test_loss).collect::<Vec<_>>());
            let (ge_mean, ge_std) = mean_std(&done.iter().map(|g| g.ge).collect::<Vec<_>>());
            rows.push(ResultRow {
                solver: kind,
                n_rows: setup.n,
                n_cols: setup.n,
                m: cfg.m,
                u: cfg.test_size(setup.n),
                p: cfg.p,
                snr: cfg.snr,
                mu: mus[s][k],
                realizations: done.len(),
                train_mean,
                train_std,
                test_mean,
                test_std,
                ge_mean,
                ge_std,
            });
        }
    }
    Ok(ExperimentResults {
        rows,
        missing,
        reference_mu,
    })
}
