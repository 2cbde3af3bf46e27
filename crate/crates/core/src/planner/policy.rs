use std::f64::consts::{LN_2, PI};

use super::PlannerError;
use crate::envs::EnvSpec;
use crate::igmm_vae::IgmmVae;
use crate::numerics::nn::{Activation, Mlp};
use crate::numerics::{softplus, Bound, Matrix, ParamStore, RngStream, Tape, Var};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Log density of the uniform prior over `[-1, 1]^d`.
pub fn log_prior(action_dim: usize) -> f64 {
    -(action_dim as f64) * LN_2
}

/// `log(1 − tanh²(x))`, stable for large `|x|`.
fn log_squash_jacobian(x: f64) -> f64 {
    2.0 * (LN_2 - x - softplus(-2.0 * x))
}

/// Log density of `tanh(x)` with `x ∼ N(mean, std²)`, evaluated at the
/// pre-squash point `x`.
pub fn squash_log_prob(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean.iter().zip(std))
        .map(|(&x, (&m, &s))| {
            let u = (x - m) / s;
            -0.5 * u * u - s.ln() - 0.5 * (2.0 * PI).ln() - log_squash_jacobian(x)
        })
        .sum()
}

/// Gaussian policy head squashed into the unit box.
#[derive(Clone, Debug)]
pub struct Policy {
    pub net: Mlp,
    pub action_dim: usize,
}

impl Policy {
    pub fn new(store: &mut ParamStore, latent_dim: usize, action_dim: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let net = Mlp::new(store, "policy", &[latent_dim, hidden, hidden, 2 * action_dim], Activation::Silu, rng);
        Self { net, action_dim }
    }

    /// Mean and log-std per row.
    pub fn heads<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> (Var<'t>, Var<'t>) {
        let out = self.net.forward(p, z);
        let d = self.action_dim;
        (out.slice_cols(0, d), out.slice_cols(d, d).clamp(LOG_STD_MIN, LOG_STD_MAX))
    }

    pub fn heads_value(&self, store: &ParamStore, z: &Matrix) -> (Matrix, Matrix) {
        let out = self.net.forward_value(store, z);
        let d = self.action_dim;
        let mean = Matrix::from_fn(out.rows(), d, |i, j| out[(i, j)]);
        let log_std = Matrix::from_fn(out.rows(), d, |i, j| out[(i, d + j)].clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std)
    }

    /// Reparameterised actions `tanh(mean + std·eps)` and their log
    /// densities (`N x 1`).
    pub fn sample_var<'t>(&self, p: &Bound<'t>, z: Var<'t>, eps: &Matrix) -> (Var<'t>, Var<'t>) {
        let tape: &'t Tape = z.tape();
        let (mean, log_std) = self.heads(p, z);
        let eps = tape.constant(eps.clone());
        let x = mean.add(log_std.exp().mul(eps));
        let action = x.tanh();
        let d = self.action_dim as f64;
        let gauss = eps.square().scale(-0.5).sub(log_std).sum_cols().add_scalar(-0.5 * d * (2.0 * PI).ln());
        // log(1 − tanh²x) = 2(ln 2 − x − softplus(−2x))
        let jac = x.neg().sub(x.scale(-2.0).softplus()).add_scalar(LN_2).scale(2.0).sum_cols();
        (action, gauss.sub(jac))
    }
}

/// One reparameterised draw for a single latent: `(action, log q(action))`.
pub fn policy_sample(
    z: &[f64],
    policy: &Policy,
    store: &ParamStore,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, f64), PlannerError> {
    if z.len() != policy.net.inputs() {
        return Err(PlannerError::DimensionMismatch(format!("latent of length {} for a policy over {}", z.len(), policy.net.inputs())));
    }
    let (mean, log_std) = policy.heads_value(store, &Matrix::row(z));
    let std: Vec<f64> = log_std.as_slice().iter().map(|v| v.exp()).collect();
    let x: Vec<f64> = mean.as_slice().iter().zip(&std).map(|(m, s)| m + s * rng.normal()).collect();
    let lp = squash_log_prob(&x, mean.as_slice(), &std);
    Ok((x.iter().map(|v| v.tanh()).collect(), lp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Explore,
    Exploit,
}

/// Encode `obs` to its latent mean and act: a policy draw when exploring,
/// the squashed mean when exploiting. The result is scaled to the
/// environment's action box.
#[allow(clippy::too_many_arguments)]
pub fn select_action(
    obs: &[f64],
    vae: &IgmmVae,
    vae_store: &ParamStore,
    policy: &Policy,
    policy_store: &ParamStore,
    spec: &EnvSpec,
    mode: ActionMode,
    rng: &mut RngStream,
) -> Result<Vec<f64>, PlannerError> {
    let (z, _) = vae.encode_latent(vae_store, &Matrix::row(obs))?;
    let z = z.row_slice(0).to_vec();
    let unit = match mode {
        ActionMode::Explore => policy_sample(&z, policy, policy_store, rng)?.0,
        ActionMode::Exploit => {
            let (mean, _) = policy.heads_value(policy_store, &Matrix::row(&z));
            mean.as_slice().iter().map(|m| m.tanh()).collect()
        }
    };
    Ok(spec.scale_action(&unit))
}
