//! Learnable state of one agent and its update steps.

use super::buffer::{sample_chunks, stack_chunks, ReplayBuffer};
use super::config::{ConfigError, RunConfig};
use super::TrainError;
use crate::envs::{EnvSpec, ObservationKind};
use crate::igmm_vae::IgmmVae;
use crate::numerics::optim::{Adam, AdamConfig};
use crate::numerics::{Matrix, ParamStore, RngStream, Tape};
use crate::planner::{j_pi, j_q, j_v, policy_sample, value_target, ActionMode, Planner, PlannerParams, TransitionBatch};
use crate::rgp::{imagine_rollout, ActionSource, BeliefVars, Rgp, RolloutState, SequenceBatch};

/// Acts in imagination by sampling the policy at the current latent mean.
pub struct ActorSource<'a> {
    pub planner: &'a Planner,
    pub store: &'a ParamStore,
}

impl ActionSource for ActorSource<'_> {
    fn action(&mut self, state: &RolloutState, rng: &mut RngStream) -> Vec<f64> {
        policy_sample(&state.current().mean, &self.planner.policy, self.store, rng)
            .map(|(a, _)| a)
            .unwrap_or_else(|_| vec![0.0; self.planner.action_dim])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldMetrics {
    /// Combined loss per update.
    pub losses: Vec<f64>,
    pub vae: f64,
    pub rgp: f64,
    pub grad_norm: f64,
    /// Whether any update hit the gradient-norm ceiling.
    pub clipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcMetrics {
    pub pi: f64,
    pub q: f64,
    pub v: f64,
}

/// Encoder, world model and planner with their optimizers.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: RunConfig,
    pub spec: EnvSpec,
    pub vae: IgmmVae,
    pub rgp: Rgp,
    pub planner: Planner,
    /// Encoder and world-model parameters, optimized jointly.
    pub world: ParamStore,
    pub params: PlannerParams,
    pub world_opt: Adam,
    pub policy_opt: Adam,
    pub q_opt: Adam,
    pub v_opt: Adam,
    pub inducing_ready: bool,
    /// Per-dimension `(shift, scale)` applied to observations before encoding.
    pub obs_shift: Vec<f64>,
    pub obs_scale: Vec<f64>,
}

impl Agent {
    /// `config` is resolved against `spec` here.
    pub fn new(config: &RunConfig, spec: &EnvSpec, rng: &mut RngStream) -> Result<Self, TrainError> {
        let mut config = config.clone();
        config.resolve(spec);
        config.validate()?;
        if !config.rgp.reward_head {
            return Err(ConfigError::Invalid("training needs the reward head".into()).into());
        }
        let mut world = ParamStore::new();
        let vae = IgmmVae::new(config.igmm.clone(), &mut world, &mut rng.split("vae"))?;
        let rgp = Rgp::new(config.rgp.clone(), &mut world, &mut rng.split("rgp"))?;
        let (planner, params) =
            Planner::new(config.planner.clone(), config.rgp.latent_dim, spec.action_dim(), &mut rng.split("planner"))?;
        let t = &config.train;
        let adam = |lr: f64| AdamConfig { learning_rate: lr, epsilon: t.epsilon, clip_norm: Some(t.clip_norm), ..AdamConfig::default() };
        let world_opt = Adam::new(&world, adam(t.learning_rate));
        let policy_opt = Adam::new(&params.policy, adam(config.planner.lr_policy));
        let q_opt = Adam::new(&params.q, adam(config.planner.lr_q));
        let v_opt = Adam::new(&params.v, adam(config.planner.lr_v));
        Ok(Self {
            spec: spec.clone(),
            vae,
            rgp,
            planner,
            world,
            params,
            world_opt,
            policy_opt,
            q_opt,
            v_opt,
            inducing_ready: false,
            obs_shift: vec![0.0; spec.observation.dim()],
            obs_scale: vec![1.0; spec.observation.dim()],
            config,
        })
    }

    /// Fit the observation standardisation to the stored episodes. Image
    /// observations are left as they are.
    pub fn fit_normalizer(&mut self, buffer: &ReplayBuffer) {
        if !self.config.train.normalize_observations || !matches!(self.spec.observation, ObservationKind::Vector(_)) {
            return;
        }
        let d = self.obs_shift.len();
        let mut n = 0.0;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for o in buffer.episodes().flat_map(|e| e.observations.iter()) {
            n += 1.0;
            for j in 0..d {
                sum[j] += o[j];
                sq[j] += o[j] * o[j];
            }
        }
        if n < 2.0 {
            return;
        }
        for j in 0..d {
            let mean = sum[j] / n;
            self.obs_shift[j] = mean;
            self.obs_scale[j] = (sq[j] / n - mean * mean).max(0.0).sqrt().max(1e-3);
        }
    }

    /// Standardised copy of observation rows.
    pub fn normalize(&self, obs: &Matrix) -> Matrix {
        Matrix::from_fn(obs.rows(), obs.cols(), |i, j| (obs[(i, j)] - self.obs_shift[j]) / self.obs_scale[j])
    }

    /// Latent means and variances of raw observation rows.
    pub fn encode(&self, obs: &Matrix) -> Result<(Matrix, Matrix), TrainError> {
        let (mean, logvar) = self.vae.encode_latent(&self.world, &self.normalize(obs))?;
        Ok((mean, logvar.map(f64::exp)))
    }

    /// Action in the unit box for one observation.
    pub fn act(&self, obs: &[f64], mode: ActionMode, rng: &mut RngStream) -> Result<Vec<f64>, TrainError> {
        let (z, _) = self.encode(&Matrix::row(obs))?;
        let z = z.row_slice(0);
        Ok(match mode {
            ActionMode::Explore => policy_sample(z, &self.planner.policy, &self.params.policy, rng)?.0,
            ActionMode::Exploit => {
                let (mean, _) = self.planner.policy.heads_value(&self.params.policy, &Matrix::row(z));
                mean.as_slice().iter().map(|m| m.tanh()).collect()
            }
        })
    }

    fn init_inducing(&mut self, obs: &Matrix, actions: &Matrix, rewards: &Matrix, chunks: usize, rng: &mut RngStream) -> Result<(), TrainError> {
        let (mean, var) = self.encode(obs)?;
        self.rgp.initialize_from_data(&mut self.world, &mean, &var, actions, Some(rewards), chunks, rng)?;
        self.inducing_ready = true;
        Ok(())
    }

    /// `R` joint steps on the encoder and world-model bounds, each on `B`
    /// freshly sampled chunks. Both terms are normalised per data point.
    /// During the first `encoder_warmup` updates only the encoder is
    /// trained; the world model is initialised from the encoded data when
    /// they end.
    pub fn world_model_update(&mut self, buffer: &ReplayBuffer, rng: &mut RngStream) -> Result<WorldMetrics, TrainError> {
        let t = self.config.train.clone();
        let prefix = self.rgp.config.prefix();
        let dataset_points: usize = buffer.episodes().map(|e| e.len().saturating_sub(prefix)).sum();
        let mut out = WorldMetrics { losses: Vec::with_capacity(t.updates_per_iteration), vae: 0.0, rgp: 0.0, grad_norm: 0.0, clipped: false };
        for _ in 0..t.updates_per_iteration {
            let chunks = sample_chunks(buffer, t.batch_chunks, t.chunk_length, rng)?;
            let (obs, actions, rewards) = stack_chunks(&chunks);
            let rewards = rewards.scale(1.0 / t.reward_scale);
            let normalized = self.normalize(&obs);
            let warming = self.world_opt.step_count() < t.encoder_warmup as u64;
            if !warming && !self.inducing_ready {
                self.init_inducing(&obs, &actions, &rewards, chunks.len(), rng)?;
            }
            let tape = Tape::new();
            let p = self.world.bind(&tape);
            let temperature = self.vae.config.temperature.at(self.world_opt.step_count());
            let vae_terms = self.vae.elbo(&tape, &p, &normalized, temperature, rng)?;
            let vae_loss = if t.kl_weight == 1.0 {
                vae_terms.loss
            } else {
                let v = &vae_terms;
                let kl = v.kl_style.add(v.kl_latent).add(v.kl_assignment).add(v.kl_sticks);
                v.reconstruction.sub(kl.scale(t.kl_weight)).mean().neg()
            };
            let (loss, rgp_loss) = if warming {
                (vae_loss, f64::NAN)
            } else {
                let batch = SequenceBatch {
                    latent: BeliefVars { mean: vae_terms.heads.z_mean, var: vae_terms.heads.z_logvar.exp() },
                    actions,
                    rewards: Some(rewards),
                    chunks: chunks.len(),
                    length: t.chunk_length,
                };
                let batch_points = chunks.len() * (t.chunk_length - prefix);
                let scale = dataset_points.max(batch_points) as f64 / batch_points as f64;
                let terms = self.rgp.elbo(&p, &batch, scale)?;
                let rgp_loss = terms.elbo.neg().scale(1.0 / (scale * batch_points as f64));
                (vae_loss.add(rgp_loss), rgp_loss.item())
            };
            let grads = p.gradients(&tape.gradient(loss));
            let info = self.world_opt.step(&mut self.world, &grads);
            out.losses.push(loss.item());
            out.vae = vae_loss.item();
            out.rgp = rgp_loss;
            out.grad_norm = info.grad_norm;
            out.clipped |= info.clipped;
        }
        Ok(out)
    }

    /// Transitions for the actor-critic: `H`-step imagined rollouts from the
    /// end of sampled chunks, plus the encoded real steps of
    /// `replay_chunks` further chunks. Rewards are returned to environment units.
    pub fn imagination_batch(&self, buffer: &ReplayBuffer, rng: &mut RngStream) -> Result<TransitionBatch, TrainError> {
        let t = &self.config.train;
        let len = t.chunk_length;
        let k = self.planner.config.value_samples.max(1);
        let chunks = sample_chunks(buffer, t.imagination_seeds, len, rng)?;
        let (obs, actions, _) = stack_chunks(&chunks);
        let (mean, var) = self.encode(&obs)?;
        let cache = self.rgp.cache(&self.world)?;
        let rows = |m: &Matrix, c: usize| Matrix::from_fn(len, m.cols(), |i, j| m[(c * len + i, j)]);
        let mut latent = Vec::new();
        let mut action = Vec::new();
        let mut reward = Vec::new();
        let mut next: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
        let mut kl = Vec::new();
        let mut source = ActorSource { planner: &self.planner, store: &self.params.policy };
        for c in 0..chunks.len() {
            let (m, v, a) = (rows(&mean, c), rows(&var, c), rows(&actions, c));
            let mut state = self.rgp.seed_state(&self.world, &m, &v, &a, len - 1)?;
            for step in imagine_rollout(&cache, &mut state, self.rgp.config.horizon, &mut source, rng)? {
                latent.push(step.latent.mean.clone());
                action.push(step.action.clone());
                reward.push(step.reward.0 * t.reward_scale);
                for draws in next.iter_mut() {
                    let z = step.next_latent.mean.iter().zip(&step.next_latent.var).map(|(mu, s2)| mu + s2.sqrt() * rng.normal()).collect();
                    draws.push(z);
                }
                kl.push(step.dynamics_kl);
            }
        }
        if t.replay_chunks > 0 {
            let chunks = sample_chunks(buffer, t.replay_chunks, len, rng)?;
            let (obs, actions, rewards) = stack_chunks(&chunks);
            let (mean, _) = self.encode(&obs)?;
            for c in 0..chunks.len() {
                for i in 0..len - 1 {
                    latent.push(mean.row_slice(c * len + i).to_vec());
                    action.push(actions.row_slice(c * len + i).to_vec());
                    reward.push(rewards[(c * len + i, 0)]);
                    for draws in next.iter_mut() {
                        draws.push(mean.row_slice(c * len + i + 1).to_vec());
                    }
                    kl.push(0.0);
                }
            }
        }
        let stack = |v: &[Vec<f64>]| Matrix::from_fn(v.len(), v[0].len(), |i, j| v[i][j]);
        Ok(TransitionBatch {
            latent: stack(&latent),
            action: stack(&action),
            reward: Matrix::column(&reward),
            next_latent: next.iter().map(|d| stack(d)).collect(),
            dynamics_kl: Some(Matrix::column(&kl)),
        })
    }

    /// One step each on the policy, the soft Q critic and the value critic,
    /// then the target blend.
    pub fn actor_critic_update(&mut self, batch: &TransitionBatch, rng: &mut RngStream) -> Result<AcMetrics, TrainError> {
        let (n, d) = (batch.len(), self.planner.action_dim);
        let pi = {
            let eps = Matrix::from_fn(n, d, |_, _| rng.normal());
            let tape = Tape::new();
            let p = self.params.policy.bind(&tape);
            let loss = j_pi(&self.planner, &p, &self.params.q, &self.params.v, batch, &eps)?;
            let grads = p.gradients(&tape.gradient(loss));
            self.policy_opt.step(&mut self.params.policy, &grads);
            loss.item()
        };
        let q = {
            let target = value_target(&self.planner, &self.params.v_target, batch)?;
            let tape = Tape::new();
            let p = self.params.q.bind(&tape);
            let loss = j_q(&self.planner, &p, &target, batch)?;
            let grads = p.gradients(&tape.gradient(loss));
            self.q_opt.step(&mut self.params.q, &grads);
            loss.item()
        };
        let v = {
            let eps = Matrix::from_fn(n, d, |_, _| rng.normal());
            let tape = Tape::new();
            let p = self.params.v.bind(&tape);
            let loss = j_v(&self.planner, &p, &self.params.policy, &self.params.q, batch, &eps)?;
            let grads = p.gradients(&tape.gradient(loss));
            self.v_opt.step(&mut self.params.v, &grads);
            loss.item()
        };
        self.params.v_target.soft_update(&self.params.v, self.planner.config.target_rate);
        Ok(AcMetrics { pi, q, v })
    }
}

/// `count` rows drawn uniformly with replacement.
pub fn subsample(batch: &TransitionBatch, count: usize, rng: &mut RngStream) -> TransitionBatch {
    let idx: Vec<usize> = (0..count).map(|_| rng.below(batch.len())).collect();
    let pick = |m: &Matrix| Matrix::from_fn(idx.len(), m.cols(), |i, j| m[(idx[i], j)]);
    TransitionBatch {
        latent: pick(&batch.latent),
        action: pick(&batch.action),
        reward: pick(&batch.reward),
        next_latent: batch.next_latent.iter().map(pick).collect(),
        dynamics_kl: batch.dynamics_kl.as_ref().map(pick),
    }
}
