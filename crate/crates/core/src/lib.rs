//! Matrix completion with kernel side information, together with
//! transductive Rademacher complexity estimates and generalization-error
//! bounds for each completion method.
//!
//! Three solvers share one data model:
//!
//! - [`solvers::mc_als_fit`]: base matrix completion, `F = W Hᵀ` with Frobenius
//!   regularization, by alternating least squares;
//! - [`solvers::kmc_als_fit`]: kernel matrix completion, the same bilinear model
//!   with RKHS-norm regularization under row and column kernels;
//! - [`solvers::kkmcex_fit`]: closed-form kernel ridge regression on
//!   `vec(F)` under the Kronecker kernel `K_f = K_h ⊗ K_w`.
//!
//! Matrices are vectorized column-major everywhere (see [`sampling`]).

pub mod cli;
pub mod complexity;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod sampling;
pub mod solvers;

pub use error::{Error, Result};
