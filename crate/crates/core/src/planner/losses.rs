//! Soft Bellman losses for the actor and the critics.

use super::policy::{log_prior, squash_log_prob};
use super::{Planner, PlannerError};
use crate::numerics::{concat_cols, logsumexp, Bound, Matrix, ParamStore, Tape, Var};

/// A batch of transitions in latent space. Actions live in the unit box.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub latent: Matrix,
    pub action: Matrix,
    /// `N x 1`.
    pub reward: Matrix,
    /// Draws of the next latent, each `N x latent_dim`.
    pub next_latent: Vec<Matrix>,
    /// Per-transition dynamics KL, `N x 1`.
    pub dynamics_kl: Option<Matrix>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.latent.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, planner: &Planner) -> Result<(), PlannerError> {
        let n = self.len();
        if n == 0 {
            return Err(PlannerError::EmptyBatch);
        }
        let ok = self.latent.cols() == planner.latent_dim
            && self.action.shape() == (n, planner.action_dim)
            && self.reward.shape() == (n, 1)
            && !self.next_latent.is_empty()
            && self.next_latent.iter().all(|m| m.shape() == self.latent.shape())
            && self.dynamics_kl.as_ref().is_none_or(|k| k.shape() == (n, 1));
        if ok {
            Ok(())
        } else {
            Err(PlannerError::DimensionMismatch("transition batch fields disagree in shape".into()))
        }
    }
}

/// `η·r + γ·log mean_k exp V_target(z′_k)`, one row per transition.
pub fn value_target(planner: &Planner, v_target: &ParamStore, batch: &TransitionBatch) -> Result<Matrix, PlannerError> {
    batch.check(planner)?;
    let c = &planner.config;
    let values: Vec<Matrix> = batch.next_latent.iter().map(|z| planner.v.forward_value(v_target, z)).collect();
    let k = values.len() as f64;
    Ok(Matrix::from_fn(batch.len(), 1, |i, _| {
        let v: Vec<f64> = values.iter().map(|m| m[(i, 0)]).collect();
        c.temperature * batch.reward[(i, 0)] + c.discount * (logsumexp(&v) - k.ln())
    }))
}

/// `mean ½(Q(z, a) − target)²`.
pub fn j_q<'t>(planner: &Planner, q: &Bound<'t>, target: &Matrix, batch: &TransitionBatch) -> Result<Var<'t>, PlannerError> {
    batch.check(planner)?;
    let tape = q.vars()[0].tape();
    let input = concat_cols(&[tape.constant(batch.latent.clone()), tape.constant(batch.action.clone())]);
    let pred = planner.q.forward(q, input);
    Ok(pred.sub(tape.constant(target.clone())).square().mean().scale(0.5))
}

/// `mean ½(V(z) − [Q(z, ã) − log q(ã|z)/p(ã) − KL_dyn])²` with `ã` drawn
/// from the current policy using the standard-normal noise `eps`.
pub fn j_v<'t>(
    planner: &Planner,
    v: &Bound<'t>,
    policy: &ParamStore,
    q: &ParamStore,
    batch: &TransitionBatch,
    eps: &Matrix,
) -> Result<Var<'t>, PlannerError> {
    batch.check(planner)?;
    let n = batch.len();
    let d = planner.action_dim;
    if eps.shape() != (n, d) {
        return Err(PlannerError::DimensionMismatch("policy noise shape".into()));
    }
    let (mean, log_std) = planner.policy.heads_value(policy, &batch.latent);
    let mut actions = Matrix::zeros(n, d);
    let mut log_ratio = vec![0.0; n];
    for i in 0..n {
        let std: Vec<f64> = log_std.row_slice(i).iter().map(|v| v.exp()).collect();
        let x: Vec<f64> = (0..d).map(|j| mean[(i, j)] + std[j] * eps[(i, j)]).collect();
        log_ratio[i] = squash_log_prob(&x, mean.row_slice(i), &std) - log_prior(d);
        for j in 0..d {
            actions[(i, j)] = x[j].tanh();
        }
    }
    let qv = planner.q.forward_value(q, &Matrix::hcat(&[&batch.latent, &actions]));
    let use_kl = planner.config.dynamics_kl;
    let target = Matrix::from_fn(n, 1, |i, _| {
        let kl = match (&batch.dynamics_kl, use_kl) {
            (Some(k), true) => k[(i, 0)],
            _ => 0.0,
        };
        qv[(i, 0)] - log_ratio[i] - kl
    });
    let tape = v.vars()[0].tape();
    let pred = planner.v.forward(v, tape.constant(batch.latent.clone()));
    Ok(pred.sub(tape.constant(target)).square().mean().scale(0.5))
}

/// `mean[log q(ã|z) − log p(ã) − Q(z, ã) + V(z)]` with reparameterised `ã`.
pub fn j_pi<'t>(
    planner: &Planner,
    policy: &Bound<'t>,
    q: &ParamStore,
    v: &ParamStore,
    batch: &TransitionBatch,
    eps: &Matrix,
) -> Result<Var<'t>, PlannerError> {
    batch.check(planner)?;
    if eps.shape() != (batch.len(), planner.action_dim) {
        return Err(PlannerError::DimensionMismatch("policy noise shape".into()));
    }
    let tape: &'t Tape = policy.vars()[0].tape();
    let z = tape.constant(batch.latent.clone());
    let (action, log_q) = planner.policy.sample_var(policy, z, eps);
    let qp = q.bind_frozen(tape);
    let qv = planner.q.forward(&qp, concat_cols(&[z, action]));
    let vv = tape.constant(planner.v.forward_value(v, &batch.latent));
    Ok(log_q.add_scalar(-log_prior(planner.action_dim)).sub(qv).add(vv).mean())
}
