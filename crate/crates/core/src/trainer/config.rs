//! Flat, typed run configuration.

use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::envs::{EnvKind, EnvSpec, ObservationKind, System, IMAGE_SIDE};
use crate::igmm_vae::{Architecture, ClusterTraining, IgmmConfig};
use crate::planner::PlannerConfig;
use crate::rgp::RgpConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?} expects {expected}, got {value:?}")]
    TypeMismatch { key: String, value: String, expected: &'static str },
    #[error("key {0:?} has no value")]
    MissingRequired(String),
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed_episodes: usize,
    pub updates_per_iteration: usize,
    pub batch_chunks: usize,
    pub chunk_length: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub iterations: usize,
    /// Evaluate every this many iterations (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub imagination_seeds: usize,
    pub ac_steps: usize,
    pub ac_batch: usize,
    /// Capacity in environment steps.
    pub buffer_capacity: usize,
    /// Save a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    /// Rewards are divided by this before entering the world model.
    pub reward_scale: f64,
    /// Chunks whose encoded real transitions join the actor-critic pool
    /// (0: imagined transitions only).
    pub replay_chunks: usize,
    /// Standardise vector observations with statistics of the seed episodes.
    pub normalize_observations: bool,
    /// Encoder-only updates before the world model joins in.
    pub encoder_warmup: usize,
    /// Weight of the encoder's KL terms (1 gives the plain bound).
    pub kl_weight: f64,
    /// Record wall-clock durations in metrics (breaks byte-identical reruns).
    pub wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed_episodes: 100,
            updates_per_iteration: 100,
            batch_chunks: 50,
            chunk_length: 10,
            learning_rate: 1e-3,
            epsilon: 1e-4,
            clip_norm: 1000.0,
            iterations: 100,
            eval_every: 1,
            eval_episodes: 10,
            imagination_seeds: 64,
            ac_steps: 100,
            ac_batch: 128,
            buffer_capacity: 1_000_000,
            checkpoint_every: 0,
            reward_scale: 1.0,
            replay_chunks: 64,
            normalize_observations: true,
            encoder_warmup: 0,
            kl_weight: 1.0,
            wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SysidConfig {
    pub system: System,
    pub length: usize,
    pub noise_std: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self { system: System::Kink, length: 500, noise_std: 0.0, steps: 1500, learning_rate: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub points: usize,
    pub training: ClusterTraining,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { points: 1000, training: ClusterTraining::default() }
    }
}

/// Everything a command needs. Model sizes that depend on the environment
/// (observation width, action width, architecture) are filled in by
/// [`RunConfig::resolve`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub out_dir: String,
    pub igmm: IgmmConfig,
    pub rgp: RgpConfig,
    pub planner: PlannerConfig,
    pub train: TrainConfig,
    pub sysid: SysidConfig,
    pub cluster: ClusterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Pendulum,
            seed: 0,
            out_dir: "out".into(),
            igmm: IgmmConfig::default(),
            rgp: RgpConfig::default(),
            planner: PlannerConfig::default(),
            train: TrainConfig::default(),
            sysid: SysidConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::TypeMismatch { key: key.into(), value: value.into(), expected })
}

fn system_name(s: System) -> &'static str {
    match s {
        System::Kink => "kink",
        System::PendulumPassive => "pendulum_passive",
    }
}

macro_rules! fields {
    ($($key:literal => $($path:ident).+ : $kind:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$($key),*];

        fn get_field(c: &RunConfig, key: &str) -> Option<String> {
            match key {
                $($key => Some(show(&c.$($path).+)),)*
                _ => None,
            }
        }

        fn set_field(c: &mut RunConfig, key: &str, value: &str) -> Result<(), ConfigError> {
            match key {
                $($key => c.$($path).+ = parse(key, value, $kind)?,)*
                _ => return Err(ConfigError::UnknownKey(key.into())),
            }
            Ok(())
        }
    };
}

const INT: &str = "a nonnegative integer";
const REAL: &str = "a real number";
const BOOL: &str = "true or false";
const TEXT: &str = "a string";

fn show<T: Display>(v: &T) -> String {
    v.to_string()
}

fields! {
    "seed" => seed: INT,
    "out_dir" => out_dir: TEXT,
    "igmm.truncation" => igmm.truncation: INT,
    "igmm.latent_dim" => igmm.latent_dim: INT,
    "igmm.style_dim" => igmm.style_dim: INT,
    "igmm.concentration" => igmm.concentration: REAL,
    "igmm.hidden" => igmm.hidden: INT,
    "igmm.samples" => igmm.samples: INT,
    "igmm.gumbel" => igmm.gumbel_assignments: BOOL,
    "igmm.temperature_initial" => igmm.temperature.initial: REAL,
    "igmm.temperature_floor" => igmm.temperature.floor: REAL,
    "igmm.temperature_decay" => igmm.temperature.decay: REAL,
    "rgp.horizon" => rgp.horizon: INT,
    "rgp.lag" => rgp.lag: INT,
    "rgp.exo_lag" => rgp.exo_lag: INT,
    "rgp.action_lag" => rgp.action_lag: INT,
    "rgp.inducing" => rgp.inducing: INT,
    "rgp.recognition_hidden" => rgp.recognition_hidden: INT,
    "rgp.diagonal" => rgp.diagonal_covariance: BOOL,
    "rgp.jitter" => rgp.jitter: REAL,
    "rgp.reward_head" => rgp.reward_head: BOOL,
    "rgp.controllers" => rgp.controllers: BOOL,
    "planner.gamma" => planner.discount: REAL,
    "planner.eta" => planner.temperature: REAL,
    "planner.tau" => planner.target_rate: REAL,
    "planner.lr_pi" => planner.lr_policy: REAL,
    "planner.lr_q" => planner.lr_q: REAL,
    "planner.lr_v" => planner.lr_v: REAL,
    "planner.value_samples" => planner.value_samples: INT,
    "planner.dynamics_kl" => planner.dynamics_kl: BOOL,
    "planner.hidden" => planner.hidden: INT,
    "train.seed_episodes" => train.seed_episodes: INT,
    "train.updates" => train.updates_per_iteration: INT,
    "train.batch_chunks" => train.batch_chunks: INT,
    "train.chunk_length" => train.chunk_length: INT,
    "train.lr" => train.learning_rate: REAL,
    "train.eps" => train.epsilon: REAL,
    "train.clip" => train.clip_norm: REAL,
    "train.iterations" => train.iterations: INT,
    "train.eval_every" => train.eval_every: INT,
    "train.eval_episodes" => train.eval_episodes: INT,
    "train.imagination_seeds" => train.imagination_seeds: INT,
    "train.ac_steps" => train.ac_steps: INT,
    "train.ac_batch" => train.ac_batch: INT,
    "train.buffer_capacity" => train.buffer_capacity: INT,
    "train.checkpoint_every" => train.checkpoint_every: INT,
    "train.reward_scale" => train.reward_scale: REAL,
    "train.replay_chunks" => train.replay_chunks: INT,
    "train.normalize_observations" => train.normalize_observations: BOOL,
    "train.encoder_warmup" => train.encoder_warmup: INT,
    "train.kl_weight" => train.kl_weight: REAL,
    "train.wall_time" => train.wall_time: BOOL,
    "sysid.length" => sysid.length: INT,
    "sysid.noise_std" => sysid.noise_std: REAL,
    "sysid.steps" => sysid.steps: INT,
    "sysid.lr" => sysid.learning_rate: REAL,
    "cluster.points" => cluster.points: INT,
    "cluster.steps" => cluster.training.steps: INT,
    "cluster.batch" => cluster.training.batch: INT,
    "cluster.lr" => cluster.training.learning_rate: REAL,
    "cluster.warmup_steps" => cluster.training.warmup_steps: INT,
    "cluster.warmup_kl_weight" => cluster.training.warmup_kl_weight: REAL,
}

impl RunConfig {
    /// Every key, in canonical order.
    pub fn keys() -> Vec<&'static str> {
        let mut k = vec!["env", "sysid.system"];
        k.extend_from_slice(KEYS);
        k
    }

    pub fn get(&self, key: &str) -> Option<String> {
        match key {
            "env" => Some(self.env.name().into()),
            "sysid.system" => Some(system_name(self.sysid.system).into()),
            _ => get_field(self, key),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if value.is_empty() {
            if Self::keys().contains(&key) {
                return Err(ConfigError::MissingRequired(key.into()));
            }
            return Err(ConfigError::UnknownKey(key.into()));
        }
        match key {
            "env" => {
                self.env = value.parse().map_err(|_| ConfigError::TypeMismatch {
                    key: key.into(),
                    value: value.into(),
                    expected: "pendulum, pendulum_image or dotchaser",
                })?
            }
            "sysid.system" => {
                self.sysid.system = match value {
                    "kink" => System::Kink,
                    "pendulum_passive" => System::PendulumPassive,
                    _ => {
                        return Err(ConfigError::TypeMismatch {
                            key: key.into(),
                            value: value.into(),
                            expected: "kink or pendulum_passive",
                        })
                    }
                }
            }
            _ => set_field(self, key, value)?,
        }
        Ok(())
    }

    /// `key=value` lines for every key.
    pub fn to_text(&self) -> String {
        Self::keys().iter().map(|k| format!("{k}={}\n", self.get(k).expect("listed key"))).collect()
    }

    /// Digest of every key except the output directory.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for k in Self::keys().iter().filter(|k| **k != "out_dir") {
            h.update(format!("{k}={}\n", self.get(k).expect("listed key")).as_bytes());
        }
        h.finalize().into()
    }

    /// Fill in the sizes that follow from the environment and tie the latent
    /// sizes of the encoder and the world model together.
    pub fn resolve(&mut self, spec: &EnvSpec) {
        self.igmm.obs_dim = spec.observation.dim();
        self.igmm.architecture = match spec.observation {
            ObservationKind::Image => Architecture::Conv { side: IMAGE_SIDE },
            ObservationKind::Vector(_) => Architecture::Dense,
        };
        self.rgp.latent_dim = self.igmm.latent_dim;
        self.rgp.action_dim = spec.action_dim();
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.igmm.validate().map_err(|e| inv(e.to_string()))?;
        self.rgp.validate().map_err(|e| inv(e.to_string()))?;
        self.planner.validate().map_err(|e| inv(e.to_string()))?;
        let t = &self.train;
        let positive = [
            ("train.updates", t.updates_per_iteration),
            ("train.batch_chunks", t.batch_chunks),
            ("train.chunk_length", t.chunk_length),
            ("train.imagination_seeds", t.imagination_seeds),
            ("train.ac_batch", t.ac_batch),
            ("train.buffer_capacity", t.buffer_capacity),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(inv(format!("{k} must be positive")));
            }
        }
        if t.chunk_length <= self.rgp.prefix() {
            return Err(inv(format!("train.chunk_length must exceed the model's history of {} steps", self.rgp.prefix())));
        }
        if !(t.learning_rate > 0.0 && t.epsilon > 0.0 && t.clip_norm > 0.0 && t.reward_scale > 0.0 && t.kl_weight > 0.0) {
            return Err(inv("optimizer constants, reward scale and KL weight must be positive".into()));
        }
        Ok(())
    }
}
