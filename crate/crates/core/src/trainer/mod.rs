//! Data collection, model updates, checkpoints and the outer training loop.

mod agent;
mod buffer;
mod checkpoint;
mod config;
mod run;
mod sysid;

pub use agent::{subsample, AcMetrics, ActorSource, Agent, WorldMetrics};
pub use buffer::{sample_chunks, stack_chunks, Episode, ReplayBuffer, TrajectoryChunk};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ClusterConfig, ConfigError, RunConfig, SysidConfig, TrainConfig};
pub use run::{collect_episode, evaluate, load_agent, random_baseline, run_d2e, EpisodeSource, MetricsRow, RunOptions, RunReport};
pub use sysid::{fit_sysid, SysidReport};

use thiserror::Error;

use crate::envs::EnvError;
use crate::igmm_vae::IgmmError;
use crate::numerics::NumericsError;
use crate::planner::PlannerError;
use crate::rgp::RgpError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("no stored episode has {length} steps")]
    NoEligibleEpisode { length: usize },
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint was written under a different configuration")]
    ConfigMismatch,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Igmm(#[from] IgmmError),
    #[error(transparent)]
    Rgp(#[from] RgpError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics: {0}")]
    Json(#[from] serde_json::Error),
}
