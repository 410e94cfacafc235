use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use super::{AlsConfig, CompletionEstimate, FactorModel, Model};
use crate::error::{Error, Result};
use crate::kernels::{factorize, FeatureFactorization, KernelMatrix};
use crate::linalg::solve_spd;
use crate::rng;
use crate::sampling::{ObservationVector, SampleSplit};

const INIT_STREAM: u64 = 0xA15;

fn validate(obs: &ObservationVector, split: &SampleSplit, p: usize, mu: f64) -> Result<()> {
    obs.check(split)?;
    if split.m() == 0 {
        return Err(Error::NoData);
    }
    if p == 0 {
        return Err(Error::InvalidParameter("factor rank p must be at least 1".into()));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu must be finite and >= 0, got {mu}")));
    }
    Ok(())
}

/// i.i.d. Gaussian factors with standard deviation `1/√p`.
fn initial_factors(n_rows: usize, n_cols: usize, p: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = rng::substream(seed, &[INIT_STREAM]);
    let normal = Normal::new(0.0, 1.0 / (p as f64).sqrt()).expect("valid std");
    let w = DMatrix::from_fn(n_rows, p, |_, _| normal.sample(&mut rng));
    let h = DMatrix::from_fn(n_cols, p, |_, _| normal.sample(&mut rng));
    (w, h)
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let scale = prev.abs().max(f64::MIN_POSITIVE);
    (prev - cur).abs() / scale
}

struct Trace {
    full: Vec<f64>,
    half: Vec<f64>,
    converged: bool,
}

impl Trace {
    fn new() -> Self {
        Trace {
            full: Vec::new(),
            half: Vec::new(),
            converged: false,
        }
    }

    /// Records one finished iteration; returns true when iteration should stop.
    fn finish_iteration(&mut self, value: f64, tol: f64) -> bool {
        let stop = match self.full.last() {
            Some(&prev) => value == 0.0 || relative_change(prev, value) < tol,
            None => value == 0.0,
        };
        self.full.push(value);
        self.converged = stop;
        stop
    }
}

/// Ridge solve of every factor row against the rows of `other` it is observed with.
/// `groups[r]` lists `(observation index, partner row)` pairs.
fn row_wise_update(
    groups: &[Vec<(usize, usize)>],
    other: &DMatrix<f64>,
    y: &DVector<f64>,
    mu: f64,
    target: &mut DMatrix<f64>,
) {
    let p = other.ncols();
    target.fill(0.0);
    for (r, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let mut gram = DMatrix::<f64>::identity(p, p) * mu;
        let mut rhs = DVector::<f64>::zeros(p);
        for &(k, partner) in group {
            let v = other.row(partner).transpose();
            gram.ger(1.0, &v, &v, 1.0);
            rhs.axpy(y[k], &v, 1.0);
        }
        let sol = solve_spd(&gram, &rhs);
        target.set_row(r, &sol.x.transpose());
    }
}

/// Base matrix completion by alternating exact row-wise ridge solves for
/// `W` given `H` and `H` given `W`.
pub fn mc_als_fit(
    obs: &ObservationVector,
    split: &SampleSplit,
    p: usize,
    mu: f64,
    cfg: &AlsConfig,
) -> Result<CompletionEstimate> {
    validate(obs, split, p, mu)?;
    let (n, l) = (split.n_rows(), split.n_cols());
    let y = obs.values();
    let mut by_row = vec![Vec::new(); n];
    let mut by_col = vec![Vec::new(); l];
    for (k, &(i, j)) in split.train().iter().enumerate() {
        by_row[i].push((k, j));
        by_col[j].push((k, i));
    }
    let objective = |w: &DMatrix<f64>, h: &DMatrix<f64>| {
        let fit: f64 = split
            .train()
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| (y[k] - w.row(i).dot(&h.row(j))).powi(2))
            .sum();
        fit + mu * (w.norm_squared() + h.norm_squared())
    };

    let (mut w, mut h) = initial_factors(n, l, p, cfg.seed);
    let mut trace = Trace::new();
    for _ in 0..cfg.max_iters {
        row_wise_update(&by_row, &h, y, mu, &mut w);
        trace.half.push(objective(&w, &h));
        row_wise_update(&by_col, &w, y, mu, &mut h);
        let value = objective(&w, &h);
        trace.half.push(value);
        if trace.finish_iteration(value, cfg.tol) {
            break;
        }
    }
    check_finite(&trace.full)?;
    let model = FactorModel {
        iterations: trace.full.len(),
        converged: trace.converged,
        w,
        h,
        b: None,
        c: None,
    };
    Ok(CompletionEstimate {
        f_hat: model.complete(),
        model: Model::Factor(model),
        objective_trace: trace.full,
        half_step_trace: trace.half,
    })
}

fn check_finite(trace: &[f64]) -> Result<()> {
    if trace.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("ALS objective became non-finite".into()))
    }
}

/// Update of one kernel-MC factor, kept in whichever coordinates it was solved in.
enum FactorUpdate {
    /// Feature-space coefficients `A` (`d × p`) with factor `Φ A`.
    Feature(DMatrix<f64>),
    /// Representer weights `α` over the observations and the partner rows they
    /// were solved against; the factor is `K B` with `B` accumulated from both.
    Representer {
        alpha: DVector<f64>,
        partner: DMatrix<f64>,
    },
}

struct HalfStep {
    update: FactorUpdate,
    /// Rows of the updated factor at each observation's own index (`m × p`).
    rows_at_obs: DMatrix<f64>,
    fit: f64,
    energy: f64,
}

/// One side (rows or columns) of the kernel-MC problem restricted to the observations.
struct KernelSide<'a> {
    kernel: &'a KernelMatrix,
    /// Row (or column) index of each observation.
    indices: Vec<usize>,
    /// `K[i_k, i_l]`.
    kernel_obs: DMatrix<f64>,
    phi: FeatureFactorization,
    /// `φ(i_k)ᵀ` stacked (`m × d`).
    phi_obs: DMatrix<f64>,
}

impl<'a> KernelSide<'a> {
    fn new(kernel: &'a KernelMatrix, indices: Vec<usize>) -> Self {
        let m = indices.len();
        let kernel_obs = DMatrix::from_fn(m, m, |a, b| kernel.entries()[(indices[a], indices[b])]);
        let phi = factorize(kernel);
        let phi_obs = DMatrix::from_fn(m, phi.cols(), |k, r| phi.factor()[(indices[k], r)]);
        KernelSide {
            kernel,
            indices,
            kernel_obs,
            phi,
            phi_obs,
        }
    }

    /// Minimize `‖y − diag(F_obs)‖² + μ tr(Xᵀ K⁺ X)` over the factor `X` in the
    /// range of `K`, with the partner factor's rows at the observations fixed.
    ///
    /// In feature coordinates `X = Φ A` this is ridge regression on the
    /// design rows `h_k ⊗ φ(i_k)`. When the observations outnumber the `d·p`
    /// unknowns the normal equations are solved directly; otherwise the
    /// equivalent representer system `(G + μI) α = y` with
    /// `G[k, l] = K[i_k, i_l] ⟨h_k, h_l⟩` is smaller and is solved instead.
    fn half_step(&self, partner: &DMatrix<f64>, y: &DVector<f64>, mu: f64) -> HalfStep {
        let (m, p) = (partner.nrows(), partner.ncols());
        let d = self.phi.cols();
        if d * p <= m {
            let design = DMatrix::from_fn(m, d * p, |k, col| partner[(k, col / d)] * self.phi_obs[(k, col % d)]);
            let mut normal = design.transpose() * &design;
            for c in 0..d * p {
                normal[(c, c)] += mu;
            }
            let rhs = design.transpose() * y;
            let a = solve_spd(&normal, &rhs).x;
            let fitted = &design * &a;
            let coeffs = DMatrix::from_column_slice(d, p, a.as_slice());
            HalfStep {
                rows_at_obs: &self.phi_obs * &coeffs,
                fit: (y - fitted).norm_squared(),
                energy: a.norm_squared(),
                update: FactorUpdate::Feature(coeffs),
            }
        } else {
            let mut gram = partner * partner.transpose();
            gram.component_mul_assign(&self.kernel_obs);
            let mut system = gram.clone();
            for k in 0..m {
                system[(k, k)] += mu;
            }
            let alpha = solve_spd(&system, y).x;
            let fitted = &gram * &alpha;
            let mut weighted = partner.clone();
            for (k, mut row) in weighted.row_iter_mut().enumerate() {
                row *= alpha[k];
            }
            HalfStep {
                rows_at_obs: &self.kernel_obs * weighted,
                fit: (y - &fitted).norm_squared(),
                energy: alpha.dot(&fitted).max(0.0),
                update: FactorUpdate::Representer {
                    alpha,
                    partner: partner.clone(),
                },
            }
        }
    }

    fn full_factor(&self, update: &FactorUpdate) -> DMatrix<f64> {
        match update {
            FactorUpdate::Feature(a) => self.phi.factor() * a,
            FactorUpdate::Representer { alpha, partner } => {
                let mut b = DMatrix::zeros(self.kernel.dim(), partner.ncols());
                for (k, &r) in self.indices.iter().enumerate() {
                    for c in 0..partner.ncols() {
                        b[(r, c)] += alpha[k] * partner[(k, c)];
                    }
                }
                self.kernel.entries() * b
            }
        }
    }
}

/// Kernel matrix completion by alternating minimization of
/// `‖P(M − W Hᵀ)‖² + μ(tr(Wᵀ K_w⁺ W) + tr(Hᵀ K_h⁺ H))`.
///
/// Each half-step is an exact ridge solve restricted to the kernel's range
/// (see [`KernelSide::half_step`]); no kernel inverse is formed. Coefficients
/// `B = K_w⁺ W`, `C = K_h⁺ H` are recovered at the end on the numerical range.
pub fn kmc_als_fit(
    obs: &ObservationVector,
    split: &SampleSplit,
    kw: &KernelMatrix,
    kh: &KernelMatrix,
    p: usize,
    mu: f64,
    cfg: &AlsConfig,
) -> Result<CompletionEstimate> {
    validate(obs, split, p, mu)?;
    let (n, l) = (split.n_rows(), split.n_cols());
    if kw.dim() != n || kh.dim() != l {
        return Err(Error::DimensionMismatch(format!(
            "kernels are {}x{} and {}x{} but the grid is {}x{}",
            kw.dim(),
            kw.dim(),
            kh.dim(),
            kh.dim(),
            n,
            l
        )));
    }
    let y = obs.values();
    let m = split.m();
    let rows = KernelSide::new(kw, split.train().iter().map(|e| e.0).collect());
    let cols = KernelSide::new(kh, split.train().iter().map(|e| e.1).collect());

    let (w0, h0) = initial_factors(n, l, p, cfg.seed);
    let mut h_at_obs = DMatrix::from_fn(m, p, |k, c| h0[(cols.indices[k], c)]);
    let mut h_energy = kh.pinv_energy(&h0);
    let mut last: Option<(FactorUpdate, FactorUpdate)> = None;
    let mut trace = Trace::new();
    for _ in 0..cfg.max_iters {
        let ws = rows.half_step(&h_at_obs, y, mu);
        trace.half.push(ws.fit + mu * (ws.energy + h_energy));
        let hs = cols.half_step(&ws.rows_at_obs, y, mu);
        let value = hs.fit + mu * (ws.energy + hs.energy);
        trace.half.push(value);
        h_energy = hs.energy;
        h_at_obs = hs.rows_at_obs;
        last = Some((ws.update, hs.update));
        if trace.finish_iteration(value, cfg.tol) {
            break;
        }
    }
    check_finite(&trace.full)?;

    let (w, h) = match &last {
        Some((wu, hu)) => (rows.full_factor(wu), cols.full_factor(hu)),
        None => (w0, h0),
    };
    let b = kw.pinv_apply(&w);
    let c = kh.pinv_apply(&h);
    let model = FactorModel {
        iterations: trace.full.len(),
        converged: trace.converged,
        w,
        h,
        b: Some(b),
        c: Some(c),
    };
    Ok(CompletionEstimate {
        f_hat: model.complete(),
        model: Model::Factor(model),
        objective_trace: trace.full,
        half_step_trace: trace.half,
    })
}
