//! Dense linear algebra, seeded randomness and reverse-mode differentiation.

pub mod gradcheck;
pub mod linalg;
mod matrix;
pub mod nn;
pub mod optim;
pub mod params;
mod rng;
pub mod special;
mod tape;

pub use linalg::{cholesky_psd, cholesky_solve, log_det_from_cholesky, sample_mvn, solve_lower, solve_upper_t, Cholesky};
pub use matrix::Matrix;
pub use params::{Bound, ParamId, ParamStore};
pub use rng::{RngState, RngStream};
pub use tape::{concat_cols, concat_rows, logsumexp, sum_all, BackArgs, Backward, Gradients, Tape, Var};
pub(crate) use tape::softplus;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix not positive definite (last jitter {last_jitter:e})")]
    NotPositiveDefinite { last_jitter: f64 },
    #[error("zero on the diagonal of a triangular matrix at index {0}")]
    SingularTriangular(usize),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("parameter node {0} does not influence the loss")]
    DisconnectedParameter(usize),
}
