//! Command-line front end: `gen`, `complete`, `trc` and `experiment`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::complexity::{trc_enumerate, trc_monte_carlo, HypothesisClassSpec, TrcRecord, DEFAULT_DRAWS};
use crate::error::{Error, Result};
use crate::experiments::{dft_kernel, generate_synthetic, run_experiment, ExperimentConfig, ExperimentResults};
use crate::io;
use crate::kernels::{factorize, KernelMatrix, WeightProfile};
use crate::rng;
use crate::sampling::{uniform_split_with, ObservationVector};
use crate::solvers::{complete, AlsConfig, SideInformation, SolverKind, SolverSettings};

const SPLIT_STREAM: u64 = 0x5B1;

#[derive(Debug, Parser)]
#[command(name = "kermit", version, about = "Matrix completion with kernel side information")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic instance: M, F, split and metadata files.
    Gen(GenArgs),
    /// Fit a solver and write the completed matrix.
    Complete(CompleteArgs),
    /// Estimate the transductive Rademacher complexity of a hypothesis class.
    Trc(TrcArgs),
    /// Run the GE-versus-size experiment.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Harmonic,
    Linear,
    Geometric,
}

/// DFT kernel shape shared by every subcommand that builds kernels.
#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Weight profile of the DFT kernel.
    #[arg(long, value_enum)]
    pub kernel: Option<ProfileArg>,
    /// Decay ratio of the geometric profile.
    #[arg(long)]
    pub ratio: Option<f64>,
}

impl KernelArgs {
    fn profile(&self, fallback: WeightProfile) -> Result<WeightProfile> {
        Ok(match (self.kernel, self.ratio) {
            (None, None) => fallback,
            (None, Some(_)) | (Some(ProfileArg::Harmonic | ProfileArg::Linear), Some(_)) => {
                return Err(Error::InvalidParameter("--ratio needs --kernel geometric".into()))
            }
            (Some(ProfileArg::Harmonic), None) => WeightProfile::Harmonic,
            (Some(ProfileArg::Linear), None) => WeightProfile::Linear,
            (Some(ProfileArg::Geometric), ratio) => WeightProfile::Geometric {
                ratio: ratio.unwrap_or(0.9),
            },
        })
    }
}

/// Settings of `kermit gen`, readable from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub rows: usize,
    pub cols: usize,
    pub p: usize,
    pub snr: f64,
    pub m: usize,
    /// Test entries; all remaining entries when absent.
    pub u: Option<usize>,
    pub kernel: WeightProfile,
    pub normalize_signal: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            rows: 50,
            cols: 50,
            p: 10,
            snr: f64::INFINITY,
            m: 500,
            u: None,
            kernel: WeightProfile::Harmonic,
            normalize_signal: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Signal-to-noise power ratio; `inf` for noiseless data.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub u: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep the raw signal scale instead of unit mean-square entries.
    #[arg(long)]
    pub no_normalize: bool,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long, value_parser = parse_solver)]
    pub solver: SolverKind,
    /// Split file (`set,i,j`).
    #[arg(long)]
    pub split: PathBuf,
    /// Observation file (`i,j,value`) holding the training values.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Full observed matrix; supplies training values when no observation
    /// file is given and is the reference for the test loss.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Row kernel matrix file; a DFT kernel is built when absent.
    #[arg(long)]
    pub kw: Option<PathBuf>,
    /// Column kernel matrix file; a DFT kernel is built when absent.
    #[arg(long)]
    pub kh: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the completed matrix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    Basemc,
    Kernelmc,
    Inductive,
    Kkmcex,
}

#[derive(Debug, Args)]
pub struct TrcArgs {
    #[arg(long, value_enum)]
    pub class: ClassArg,
    /// Nuclear-norm radius (basemc).
    #[arg(long)]
    pub t: Option<f64>,
    /// RKHS radius (kernelmc).
    #[arg(long)]
    pub t_b: Option<f64>,
    /// Squared Frobenius radius of the row coefficients (inductive).
    #[arg(long)]
    pub t_w: Option<f64>,
    /// Squared Frobenius radius of the column coefficients (inductive).
    #[arg(long)]
    pub t_h: Option<f64>,
    /// Ellipsoid radius (kkmcex).
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub kw: Option<PathBuf>,
    #[arg(long)]
    pub kh: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Average over all 2ⁿ sign vectors instead of sampling.
    #[arg(long)]
    pub enumerate: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Results CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write `<solver>_<train|test|ge>.dat` series files here.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_solver)]
    pub solvers: Option<Vec<SolverKind>>,
}

fn parse_solver(s: &str) -> std::result::Result<SolverKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Run a parsed command, writing user-facing output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Complete(a) => cmd_complete(&a, out),
        Command::Trc(a) => cmd_trc(&a, out),
        Command::Experiment(a) => cmd_experiment(&a, out),
    }
}

fn stdout_error(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Metadata written next to a generated instance.
#[derive(Debug, Serialize)]
struct GenMetadata<'a> {
    config: &'a GenConfig,
    /// How `snr` is read.
    snr_definition: &'static str,
    signal_scale: f64,
    train: usize,
    test: usize,
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(path) => io::read_toml(path)?,
        None => GenConfig::default(),
    };
    cfg.rows = a.rows.unwrap_or(cfg.rows);
    cfg.cols = a.cols.unwrap_or(cfg.cols);
    cfg.p = a.p.unwrap_or(cfg.p);
    cfg.snr = a.snr.unwrap_or(cfg.snr);
    cfg.m = a.m.unwrap_or(cfg.m);
    cfg.u = a.u.or(cfg.u);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.normalize_signal &= !a.no_normalize;
    cfg.kernel = a.kernel.profile(cfg.kernel)?;
    if cfg.rows == 0 || cfg.cols == 0 {
        return Err(Error::Config {
            key: "rows".into(),
            message: "grid dimensions must be positive".into(),
        });
    }

    let kw = dft_kernel(cfg.rows, cfg.kernel)?;
    let kh = dft_kernel(cfg.cols, cfg.kernel)?;
    let inst = generate_synthetic(&kw, &kh, cfg.p, cfg.snr, cfg.normalize_signal, cfg.seed)?;
    let u = cfg.u.unwrap_or((cfg.rows * cfg.cols).saturating_sub(cfg.m));
    let split = uniform_split_with(cfg.rows, cfg.cols, cfg.m, u, &mut rng::substream(cfg.seed, &[SPLIT_STREAM]))?;

    create_dir(&a.out)?;
    io::write_matrix(&a.out.join("M.txt"), &inst.m)?;
    io::write_matrix(&a.out.join("F.txt"), &inst.f)?;
    io::write_split(&a.out.join("split.csv"), &split)?;
    io::write_toml(
        &a.out.join("meta.toml"),
        &GenMetadata {
            config: &cfg,
            snr_definition: "power ratio |F|_F^2 / |E|_F^2",
            signal_scale: inst.signal_scale,
            train: split.m(),
            test: split.u(),
        },
    )?;
    writeln!(out, "wrote {}", a.out.display()).map_err(stdout_error)
}

fn load_kernel(path: &Path) -> Result<KernelMatrix> {
    KernelMatrix::new(io::read_matrix(path)?).map_err(|e| match e {
        Error::Symmetry { .. } | Error::NotPsd { .. } | Error::DimensionMismatch(_) => {
            Error::parse(path, e.to_string())
        }
        other => other,
    })
}

fn kernels(
    kw: &Option<PathBuf>,
    kh: &Option<PathBuf>,
    args: &KernelArgs,
    n_rows: usize,
    n_cols: usize,
) -> Result<(Arc<KernelMatrix>, Arc<KernelMatrix>)> {
    let profile = args.profile(WeightProfile::Harmonic)?;
    let load = |path: &Option<PathBuf>, dim: usize, side: &str| -> Result<Arc<KernelMatrix>> {
        let k = match path {
            Some(p) => {
                let k = load_kernel(p)?;
                if k.dim() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: {side} kernel is {}x{} but the split has {dim} {side}s",
                        p.display(),
                        k.dim(),
                        k.dim()
                    )));
                }
                k
            }
            None => dft_kernel(dim, profile)?,
        };
        Ok(Arc::new(k))
    };
    Ok((load(kw, n_rows, "row")?, load(kh, n_cols, "column")?))
}

pub fn cmd_complete(a: &CompleteArgs, out: &mut dyn Write) -> Result<()> {
    let split = io::read_split(&a.split)?;
    let matrix = match &a.matrix {
        Some(p) => {
            let m = io::read_matrix(p)?;
            if m.shape() != (split.n_rows(), split.n_cols()) {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {}x{} but {} describes a {}x{} grid",
                    p.display(),
                    m.nrows(),
                    m.ncols(),
                    a.split.display(),
                    split.n_rows(),
                    split.n_cols()
                )));
            }
            Some(m)
        }
        None => None,
    };
    let obs = match (&a.observations, &matrix) {
        (Some(p), _) => io::observations_for_split(&io::read_observations(p)?, &split, p)?,
        (None, Some(m)) => ObservationVector::from_matrix(&split, m)?,
        (None, None) => {
            return Err(Error::InvalidParameter(
                "give --observations or --matrix for the training values".into(),
            ))
        }
    };
    let side = if a.solver.uses_kernels() {
        let (kw, kh) = kernels(&a.kw, &a.kh, &a.kernel, split.n_rows(), split.n_cols())?;
        Some(SideInformation::new(kw, kh))
    } else {
        None
    };
    let defaults = AlsConfig::default();
    let settings = SolverSettings {
        rank: a.rank,
        mu: a.mu,
        als: AlsConfig {
            max_iters: a.max_iters.unwrap_or(defaults.max_iters),
            tol: a.tol.unwrap_or(defaults.tol),
            seed: a.seed,
        },
    };
    let est = complete(a.solver, &obs, &split, side.as_ref(), &settings)?;
    if est.f_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("the estimate has non-finite entries".into()));
    }
    io::write_matrix(&a.out, &est.f_hat)?;

    let mean = |pairs: &mut dyn Iterator<Item = (f64, f64)>| {
        let (sum, count) = pairs.fold((0.0, 0usize), |(s, c), (x, y)| (s + (x - y).powi(2), c + 1));
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    };
    let train = mean(&mut split.train().iter().zip(obs.values().iter()).map(|(&e, &y)| (est.f_hat[e], y)));
    let test = match &matrix {
        Some(m) => mean(&mut split.test().iter().map(|&e| (est.f_hat[e], m[e]))),
        None => f64::NAN,
    };
    writeln!(out, "{train:e} {test:e} {:e}", test - train).map_err(stdout_error)
}

fn radius(value: Option<f64>, flag: &str, class: &str) -> Result<f64> {
    value.ok_or_else(|| Error::InvalidParameter(format!("class {class} needs --{flag}")))
}

pub fn cmd_trc(a: &TrcArgs, out: &mut dyn Write) -> Result<()> {
    let split = io::read_split(&a.split)?;
    let (n, l) = (split.n_rows(), split.n_cols());
    let class = match a.class {
        ClassArg::Basemc => HypothesisClassSpec::BaseMc {
            t: radius(a.t, "t", "basemc")?,
        },
        ClassArg::Kernelmc => {
            let (kw, kh) = kernels(&a.kw, &a.kh, &a.kernel, n, l)?;
            HypothesisClassSpec::KernelMc {
                t_b: radius(a.t_b, "t-b", "kernelmc")?,
                kw,
                kh,
            }
        }
        ClassArg::Inductive => {
            let (kw, kh) = kernels(&a.kw, &a.kh, &a.kernel, n, l)?;
            HypothesisClassSpec::Inductive {
                t_w: radius(a.t_w, "t-w", "inductive")?,
                t_h: radius(a.t_h, "t-h", "inductive")?,
                phi_w: Arc::new(factorize(&kw)),
                phi_h: Arc::new(factorize(&kh)),
            }
        }
        ClassArg::Kkmcex => {
            let (kw, kh) = kernels(&a.kw, &a.kh, &a.kernel, n, l)?;
            HypothesisClassSpec::Kkmcex {
                b: radius(a.b, "b", "kkmcex")?,
                kf: SideInformation::new(kw, kh).grid_kernel(),
            }
        }
    };
    let result = if a.enumerate {
        trc_enumerate(&class, &split)?
    } else {
        trc_monte_carlo(&class, &split, a.draws, a.seed)?
    };
    let mut w = csv::Writer::from_writer(out);
    w.serialize(TrcRecord::new(&class, &split, &result))
        .map_err(|e| Error::parse("<stdout>", e.to_string()))?;
    w.flush().map_err(stdout_error)
}

fn write_results(path: &Path, results: &ExperimentResults) -> Result<()> {
    let csv_err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in &results.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    if !results.missing.is_empty() {
        let missing = path.with_extension("missing.csv");
        let mut w = csv::Writer::from_path(&missing).map_err(|e| Error::parse(&missing, e.to_string()))?;
        for cell in &results.missing {
            w.serialize(cell).map_err(|e| Error::parse(&missing, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&missing, e))?;
    }
    Ok(())
}

/// One `N value` file per solver and loss.
fn write_plot_data(dir: &Path, cfg: &ExperimentConfig, results: &ExperimentResults) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for &kind in &cfg.solvers {
        for (name, pick) in [
            ("train", (|r| r.train_mean) as fn(&crate::experiments::ResultRow) -> f64),
            ("test", |r| r.test_mean),
            ("ge", |r| r.ge_mean),
        ] {
            let path = dir.join(format!("{kind}_{name}.dat"));
            let body: String = results
                .rows
                .iter()
                .filter(|r| r.solver == kind)
                .map(|r| format!("{} {:e}\n", r.n_rows, pick(r)))
                .collect();
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn cmd_experiment(a: &ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg: ExperimentConfig = match &a.config {
        Some(path) => io::read_toml(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(sizes) = &a.sizes {
        cfg.sizes = sizes.clone();
    }
    cfg.realizations = a.realizations.unwrap_or(cfg.realizations);
    cfg.snr = a.snr.unwrap_or(cfg.snr);
    cfg.m = a.m.unwrap_or(cfg.m);
    cfg.p = a.p.unwrap_or(cfg.p);
    cfg.mu = a.mu.or(cfg.mu);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if let Some(solvers) = &a.solvers {
        cfg.solvers = solvers.clone();
    }
    let results = run_experiment(&cfg)?;
    write_results(&a.out, &results)?;
    if let Some(dir) = &a.plot_data {
        write_plot_data(dir, &cfg, &results)?;
    }
    for cell in &results.missing {
        eprintln!(
            "warning: {} at N={} realization {} failed: {}",
            cell.solver, cell.n_rows, cell.realization, cell.reason
        );
    }
    writeln!(out, "wrote {} rows to {}", results.rows.len(), a.out.display()).map_err(stdout_error)
}

/// Size the global thread pool from `KERMIT_THREADS` (unset or 0 means automatic).
pub fn configure_threads() -> Result<()> {
    let threads = match std::env::var("KERMIT_THREADS") {
        Err(_) => return Ok(()),
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Error::Config {
            key: "KERMIT_THREADS".into(),
            message: format!("expected a non-negative integer, got `{v}`"),
        })?,
    };
    if threads > 0 {
        // Fails only if the pool was already built, in which case it stays as is.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}
