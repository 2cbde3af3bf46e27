//! Recurrent Gaussian-process world model.
//!
//! Each layer is a sparse GP over a window of its own past latents, the
//! layer below and past actions. Inputs are uncertain, so the likelihood
//! terms use kernel expectations under diagonal-Gaussian beliefs.

mod kernel;
mod layer;
mod model;
mod rollout;

pub use kernel::{kernel_eval, kernel_matrix, kernel_matrix_var, psi1_var, psi2_var, psi_statistics, KernelHyper, PsiStats};
pub use layer::{gp_conditional, variance_clamp_count, BeliefVars, GpLayer, GpVars, LayerCache, Moments, MIN_VARIANCE};
pub use model::{
    assemble_layer_input, entropy_and_prior, LayerKind, Rgp, RgpConfig, RgpElboTerms, SequenceBatch, SequencePosterior,
    WorldCache,
};
pub use rollout::{imagine_rollout, ActionSource, Belief, ControllerSource, ImaginedStep, RolloutState};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RgpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("step {index} needs {needed} more steps of history")]
    InsufficientHistory { index: usize, needed: usize },
    #[error("rollout of {steps} steps exceeds the {horizon} layers")]
    HorizonExceeded { steps: usize, horizon: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
