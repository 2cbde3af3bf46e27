//! Moment-matched multi-step prediction through the layer stack.

use super::layer::LayerCache;
use super::model::{slots, LayerKind, Rgp, SequenceBatch, Source, WorldCache};
use super::{BeliefVars, RgpError};
use crate::numerics::{Matrix, ParamStore, RngStream, Tape};

/// Diagonal Gaussian belief.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Belief {
    pub fn delta(mean: Vec<f64>) -> Self {
        let var = vec![0.0; mean.len()];
        Self { mean, var }
    }
}

/// History of beliefs for every layer plus the actions taken so far.
///
/// `latents[h]` has one more entry than `actions`: the newest latent step has
/// no action yet.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutState {
    pub latents: Vec<Vec<Belief>>,
    pub actions: Vec<Vec<f64>>,
}

impl RolloutState {
    pub fn now(&self) -> usize {
        self.latents[0].len() - 1
    }

    pub fn current(&self) -> &Belief {
        self.latents[0].last().expect("rollout state has at least one step")
    }

    fn input(&self, cache: &WorldCache, kind: LayerKind, i: usize) -> Result<(Vec<f64>, Vec<f64>), RgpError> {
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for (src, t) in slots(&cache.config, kind, i)? {
            match src {
                Source::Latent(h) => {
                    let b = self.latents[h].get(t).ok_or(RgpError::InsufficientHistory { index: i, needed: 0 })?;
                    mean.extend_from_slice(&b.mean);
                    var.extend_from_slice(&b.var);
                }
                Source::Action => {
                    let a = self.actions.get(t).ok_or(RgpError::InsufficientHistory { index: i, needed: 0 })?;
                    mean.extend_from_slice(a);
                    var.extend(std::iter::repeat_n(0.0, a.len()));
                }
            }
        }
        Ok((mean, var))
    }
}

/// Chooses actions during imagination.
pub trait ActionSource {
    fn action(&mut self, state: &RolloutState, rng: &mut RngStream) -> Vec<f64>;
}

/// Acts with the first-layer controller mapping, sampling from its
/// predictive distribution when `sample` is set.
pub struct ControllerSource<'a> {
    pub cache: &'a WorldCache,
    pub sample: bool,
}

impl ActionSource for ControllerSource<'_> {
    fn action(&mut self, state: &RolloutState, rng: &mut RngStream) -> Vec<f64> {
        let Some(layer) = self.cache.controllers.first() else {
            return vec![0.0; self.cache.config.action_dim];
        };
        let Ok((m, v)) = state.input(self.cache, LayerKind::Controller(0), state.now()) else {
            return vec![0.0; self.cache.config.action_dim];
        };
        match layer.predict_moments(&m, &v) {
            Ok(mom) => mom
                .iter()
                .map(|x| if self.sample { x.mean + (x.variance + layer.noise).sqrt() * rng.normal() } else { x.mean })
                .collect(),
            Err(_) => vec![0.0; self.cache.config.action_dim],
        }
    }
}

/// One imagined transition in first-layer latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedStep {
    pub latent: Belief,
    pub action: Vec<f64>,
    /// Predictive mean and variance of the reward (zero without a reward
    /// mapping).
    pub reward: (f64, f64),
    pub next_latent: Belief,
    /// KL from the uncertain-input prediction of the next latent to the
    /// prediction made at the input means.
    pub dynamics_kl: f64,
}

fn predict(layer: &LayerCache, mean: &[f64], var: &[f64]) -> Result<Belief, RgpError> {
    let m = layer.predict_moments(mean, var)?;
    Ok(Belief {
        mean: m.iter().map(|x| x.mean).collect(),
        var: m.iter().map(|x| x.variance + layer.noise).collect(),
    })
}

fn gaussian_kl(q: &Belief, p: &Belief) -> f64 {
    q.mean
        .iter()
        .zip(&q.var)
        .zip(p.mean.iter().zip(&p.var))
        .map(|((mq, vq), (mp, vp))| 0.5 * (vq / vp + (mq - mp).powi(2) / vp - 1.0 + (vp / vq).ln()))
        .sum()
}

/// Roll the model forward `steps` steps from `state`, which is extended in
/// place. `steps` may not exceed the number of layers.
pub fn imagine_rollout(
    cache: &WorldCache,
    state: &mut RolloutState,
    steps: usize,
    source: &mut dyn ActionSource,
    rng: &mut RngStream,
) -> Result<Vec<ImaginedStep>, RgpError> {
    let cfg = &cache.config;
    if steps > cfg.horizon {
        return Err(RgpError::HorizonExceeded { steps, horizon: cfg.horizon });
    }
    if state.latents.len() != cfg.horizon || state.latents.iter().any(|l| l.len() != state.actions.len() + 1) {
        return Err(RgpError::DimensionMismatch("rollout state does not match the layer stack".into()));
    }
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let t = state.now();
        let latent = state.current().clone();
        let action = source.action(state, rng);
        if action.len() != cfg.action_dim {
            return Err(RgpError::DimensionMismatch(format!("action of length {}", action.len())));
        }
        state.actions.push(action.clone());
        let reward = match &cache.reward {
            Some(layer) => {
                let (m, v) = state.input(cache, LayerKind::Reward, t)?;
                let b = predict(layer, &m, &v)?;
                (b.mean[0], b.var[0])
            }
            None => (0.0, 0.0),
        };
        let mut dynamics_kl = 0.0;
        for h in 0..cfg.horizon {
            let (m, v) = state.input(cache, LayerKind::Transition(h), t + 1)?;
            let next = predict(&cache.transitions[h], &m, &v)?;
            if h == 0 {
                let point = predict(&cache.transitions[0], &m, &vec![0.0; v.len()])?;
                dynamics_kl = gaussian_kl(&next, &point).max(0.0);
            }
            state.latents[h].push(next);
        }
        out.push(ImaginedStep {
            latent,
            action,
            reward,
            next_latent: state.latents[0][t + 1].clone(),
            dynamics_kl,
        });
    }
    Ok(out)
}

impl Rgp {
    /// Posterior beliefs for one sequence up to and including step `upto`,
    /// ready to seed [`imagine_rollout`].
    pub fn seed_state(
        &self,
        store: &ParamStore,
        latent_mean: &Matrix,
        latent_var: &Matrix,
        actions: &Matrix,
        upto: usize,
    ) -> Result<RolloutState, RgpError> {
        let len = upto + 1;
        if latent_mean.rows() < len || actions.rows() < upto {
            return Err(RgpError::InsufficientHistory { index: upto, needed: len.saturating_sub(latent_mean.rows()) });
        }
        let c = &self.config;
        let head = |m: &Matrix, rows: usize| Matrix::from_fn(rows, m.cols(), |i, j| m[(i, j)]);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let batch = SequenceBatch {
            latent: BeliefVars {
                mean: tape.constant(head(latent_mean, len)),
                var: tape.constant(head(latent_var, len)),
            },
            actions: Matrix::from_fn(len, c.action_dim, |i, j| if i < actions.rows() { actions[(i, j)] } else { 0.0 }),
            rewards: c.reward_head.then(|| Matrix::zeros(len, 1)),
            chunks: 1,
            length: len,
        };
        let post = self.posterior(&p, &batch)?;
        let latents = post
            .beliefs
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|b| Belief { mean: b.mean.value().as_slice().to_vec(), var: b.var.value().as_slice().to_vec() })
                    .collect()
            })
            .collect();
        let actions = (0..upto).map(|i| actions.row_slice(i).to_vec()).collect();
        Ok(RolloutState { latents, actions })
    }
}
