//! Soft actor-critic in latent space.
//!
//! The policy is a tanh-squashed Gaussian over the unit action box with a
//! uniform action prior, so its KL to the prior is an entropy bonus.

mod losses;
mod policy;
mod tabular;

pub use losses::{j_pi, j_q, j_v, value_target, TransitionBatch};
pub use policy::{log_prior, policy_sample, select_action, squash_log_prob, ActionMode, Policy, LOG_STD_MAX, LOG_STD_MIN};
pub use tabular::{
    closed_form_policy, soft_bellman_apply, soft_q_table, soft_value_iteration, tabular_actor_critic, tabular_pi_loss,
    TabularMdp, TabularSolution,
};

use thiserror::Error;

use crate::igmm_vae::IgmmError;
use crate::numerics::nn::{Activation, Mlp};
use crate::numerics::{ParamStore, RngStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Encoder(#[from] IgmmError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub discount: f64,
    /// Reward temperature η, applied inside the Q target.
    pub temperature: f64,
    pub target_rate: f64,
    pub lr_policy: f64,
    pub lr_q: f64,
    pub lr_v: f64,
    /// Samples of the next latent in the log-mean-exp of the Q target.
    pub value_samples: usize,
    /// Include the dynamics KL in the value target.
    pub dynamics_kl: bool,
    pub hidden: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            discount: 0.999,
            temperature: 1.0,
            target_rate: 0.005,
            lr_policy: 3e-4,
            lr_q: 3e-4,
            lr_v: 3e-4,
            value_samples: 8,
            dynamics_kl: true,
            hidden: 64,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.into()));
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return bad("target rate must lie in (0, 1]");
        }
        if !(self.lr_policy > 0.0 && self.lr_q > 0.0 && self.lr_v > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.value_samples == 0 || self.hidden == 0 {
            return bad("sample count and width must be positive");
        }
        Ok(())
    }
}

/// Parameter stores of the actor and critics. The target value network
/// shares the layout of `v`.
#[derive(Clone, Debug)]
pub struct PlannerParams {
    pub policy: ParamStore,
    pub q: ParamStore,
    pub v: ParamStore,
    pub v_target: ParamStore,
}

#[derive(Clone, Debug)]
pub struct Planner {
    pub config: PlannerConfig,
    pub policy: Policy,
    pub q: Mlp,
    pub v: Mlp,
    pub latent_dim: usize,
    pub action_dim: usize,
}

impl Planner {
    pub fn new(
        config: PlannerConfig,
        latent_dim: usize,
        action_dim: usize,
        rng: &mut RngStream,
    ) -> Result<(Self, PlannerParams), PlannerError> {
        config.validate()?;
        let h = config.hidden;
        let mut ps = ParamStore::new();
        let policy = Policy::new(&mut ps, latent_dim, action_dim, h, rng);
        let mut qs = ParamStore::new();
        let q = Mlp::new(&mut qs, "q", &[latent_dim + action_dim, h, h, 1], Activation::Silu, rng);
        let mut vs = ParamStore::new();
        let v = Mlp::new(&mut vs, "v", &[latent_dim, h, h, 1], Activation::Silu, rng);
        let params = PlannerParams { policy: ps, q: qs, v_target: vs.clone(), v: vs };
        Ok((Self { config, policy, q, v, latent_dim, action_dim }, params))
    }
}
