//! Numerical substrate: dense and sparse matrices, spectral estimators, an SPD solver
//! and a reverse-mode tape over a fixed operation set.

pub(crate) mod dense;
mod gradcheck;
mod sparse;
mod spectral;
mod tape;

pub use dense::DenseMatrix;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use sparse::SparseMatrix;
pub use spectral::{
    lambda_max, singular_value_bounds, solve_spd, spectral_norm, symmetric_eigenvalues, LambdaEstimate, POWER_MAX_ITERS,
};
pub use tape::{softmax, Gradients, Tape, Var};
