//! Exact soft dynamic programming on small discrete problems.

use super::PlannerConfig;
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::{logsumexp, Matrix, ParamStore, RngStream, Tape, Var};

/// Finite MDP with an action prior per state.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub states: usize,
    pub actions: usize,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`.
    pub reward: Vec<Vec<f64>>,
    /// `prior[s][a]`, rows sum to one.
    pub prior: Vec<Vec<f64>>,
}

impl TabularMdp {
    /// Random instance with Dirichlet(1) transition rows, standard-normal
    /// rewards and a uniform action prior.
    pub fn random(states: usize, actions: usize, rng: &mut RngStream) -> Self {
        let transition = (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| {
                        let w: Vec<f64> = (0..states).map(|_| -rng.uniform().ln()).collect();
                        let t: f64 = w.iter().sum();
                        w.iter().map(|v| v / t).collect()
                    })
                    .collect()
            })
            .collect();
        let reward = (0..states).map(|_| (0..actions).map(|_| rng.normal()).collect()).collect();
        let prior = vec![vec![1.0 / actions as f64; actions]; states];
        Self { states, actions, transition, reward, prior }
    }
}

/// `Q(s,a) = η·r(s,a) + γ·log Σ_{s'} P(s'|s,a)·exp V(s')`.
pub fn soft_q_table(mdp: &TabularMdp, v: &[f64], cfg: &PlannerConfig) -> Vec<Vec<f64>> {
    (0..mdp.states)
        .map(|s| {
            (0..mdp.actions)
                .map(|a| {
                    let terms: Vec<f64> = (0..mdp.states)
                        .filter(|&t| mdp.transition[s][a][t] > 0.0)
                        .map(|t| mdp.transition[s][a][t].ln() + v[t])
                        .collect();
                    cfg.temperature * mdp.reward[s][a] + cfg.discount * logsumexp(&terms)
                })
                .collect()
        })
        .collect()
}

/// Soft Bellman operator: `V(s) ← log Σ_a p(a|s)·exp Q(s,a)`.
pub fn soft_bellman_apply(mdp: &TabularMdp, v: &[f64], cfg: &PlannerConfig) -> Vec<f64> {
    let q = soft_q_table(mdp, v, cfg);
    (0..mdp.states)
        .map(|s| {
            let t: Vec<f64> = (0..mdp.actions).map(|a| mdp.prior[s][a].ln() + q[s][a]).collect();
            logsumexp(&t)
        })
        .collect()
}

/// Iterate the operator from zero until successive sup-norm changes fall
/// below `tol`.
pub fn soft_value_iteration(mdp: &TabularMdp, cfg: &PlannerConfig, tol: f64, max_iter: usize) -> Vec<f64> {
    let mut v = vec![0.0; mdp.states];
    for _ in 0..max_iter {
        let next = soft_bellman_apply(mdp, &v, cfg);
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < tol {
            break;
        }
    }
    v
}

/// `π(a|s) = p(a|s)·exp(Q(s,a) − V(s))`, renormalised per state.
pub fn closed_form_policy(mdp: &TabularMdp, q: &[Vec<f64>], v: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.states)
        .map(|s| {
            let logits: Vec<f64> = (0..mdp.actions).map(|a| mdp.prior[s][a].ln() + q[s][a] - v[s]).collect();
            let z = logsumexp(&logits);
            logits.iter().map(|l| (l - z).exp()).collect()
        })
        .collect()
}

/// Policy loss `Σ_s Σ_a π(a|s)[log π(a|s) − log p(a|s) − Q(s,a)]` for a
/// softmax policy given by `logits` (`S x A`).
pub fn tabular_pi_loss<'t>(mdp: &TabularMdp, logits: Var<'t>, q: &Matrix) -> Var<'t> {
    let tape = logits.tape();
    let log_pi = logits.sub(logits.row_logsumexp().broadcast(mdp.states, mdp.actions));
    let log_prior = Matrix::from_fn(mdp.states, mdp.actions, |s, a| mdp.prior[s][a].ln());
    let inner = log_pi.sub(tape.constant(log_prior)).sub(tape.constant(q.clone()));
    log_pi.exp().mul(inner).sum()
}

#[derive(Clone, Debug)]
pub struct TabularSolution {
    pub policy: Vec<Vec<f64>>,
    pub q: Matrix,
    pub v: Vec<f64>,
}

/// Alternate gradient steps on the tabular analogues of the policy, Q and V
/// losses (in that order), followed by the target update.
pub fn tabular_actor_critic(mdp: &TabularMdp, cfg: &PlannerConfig, steps: usize, lr: f64) -> TabularSolution {
    let (s_n, a_n) = (mdp.states, mdp.actions);
    let mut pi = ParamStore::new();
    let logits = pi.add("logits", Matrix::zeros(s_n, a_n));
    let mut qs = ParamStore::new();
    let qid = qs.add("q", Matrix::zeros(s_n, a_n));
    let mut vs = ParamStore::new();
    let vid = vs.add("v", Matrix::zeros(s_n, 1));
    let mut target = vs.clone();
    let adam = |s: &ParamStore| Adam::new(s, AdamConfig { learning_rate: lr, epsilon: 1e-8, clip_norm: None, ..AdamConfig::default() });
    let (mut opt_pi, mut opt_q, mut opt_v) = (adam(&pi), adam(&qs), adam(&vs));
    let log_prior = Matrix::from_fn(s_n, a_n, |s, a| mdp.prior[s][a].ln());
    for step in 0..steps {
        // Decay so Adam settles onto the fixed point.
        let scale = if step > steps / 2 { 0.1 } else { 1.0 };
        for o in [&mut opt_pi, &mut opt_q, &mut opt_v] {
            o.config.learning_rate = lr * scale;
        }
        let tape = Tape::new();
        let p = pi.bind(&tape);
        let loss = tabular_pi_loss(mdp, p.get(logits), qs.get(qid));
        let g = tape.gradient(loss);
        opt_pi.step(&mut pi, &p.gradients(&g));

        let tv: Vec<f64> = target.get(vid).as_slice().to_vec();
        let qt = Matrix::from_rows(&soft_q_table(mdp, &tv, cfg)).expect("rectangular");
        let tape = Tape::new();
        let p = qs.bind(&tape);
        let loss = p.get(qid).sub(tape.constant(qt)).square().sum().scale(0.5);
        let g = tape.gradient(loss);
        opt_q.step(&mut qs, &p.gradients(&g));

        let l = pi.get(logits);
        let vt = Matrix::from_fn(s_n, 1, |s, _| {
            let z = logsumexp(l.row_slice(s));
            (0..a_n)
                .map(|a| {
                    let lp = l[(s, a)] - z;
                    lp.exp() * (qs.get(qid)[(s, a)] - (lp - log_prior[(s, a)]))
                })
                .sum()
        });
        let tape = Tape::new();
        let p = vs.bind(&tape);
        let loss = p.get(vid).sub(tape.constant(vt)).square().sum().scale(0.5);
        let g = tape.gradient(loss);
        opt_v.step(&mut vs, &p.gradients(&g));
        target.soft_update(&vs, cfg.target_rate);
    }
    let l = pi.get(logits);
    let policy = (0..s_n)
        .map(|s| {
            let z = logsumexp(l.row_slice(s));
            l.row_slice(s).iter().map(|v| (v - z).exp()).collect()
        })
        .collect();
    TabularSolution { policy, q: qs.get(qid).clone(), v: vs.get(vid).as_slice().to_vec() }
}
