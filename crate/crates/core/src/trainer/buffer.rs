//! Episode storage and chunk sampling.

use std::collections::VecDeque;

use super::TrainError;
use crate::numerics::{Matrix, RngStream};

/// One episode of `(observation, action, reward)` triples; `actions` are in
/// the unit box.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Complete episodes with whole-episode FIFO eviction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    steps: usize,
    /// Episodes ever appended, so chunk provenance stays unique after eviction.
    appended: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { episodes: VecDeque::new(), capacity, steps: 0, appended: 0 }
    }

    /// Append an episode, then evict the oldest ones while over capacity.
    /// The newest episode is always kept.
    pub fn push(&mut self, episode: Episode) {
        self.steps += episode.len();
        self.episodes.push_back(episode);
        self.appended += 1;
        while self.steps > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("nonempty");
            self.steps -= old.len();
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Id of the `i`-th stored episode, counted over all appends.
    pub fn episode_id(&self, i: usize) -> usize {
        self.appended - self.episodes.len() + i
    }

    pub(crate) fn appended(&self) -> usize {
        self.appended
    }

    pub(crate) fn restore(episodes: Vec<Episode>, capacity: usize, appended: usize) -> Self {
        let steps = episodes.iter().map(Episode::len).sum();
        Self { episodes: episodes.into(), capacity, steps, appended }
    }
}

/// Consecutive steps of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryChunk {
    pub episode: usize,
    pub offset: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

/// Draw `count` chunks uniformly over all `(episode, start)` pairs that fit.
pub fn sample_chunks(
    buffer: &ReplayBuffer,
    count: usize,
    length: usize,
    rng: &mut RngStream,
) -> Result<Vec<TrajectoryChunk>, TrainError> {
    if buffer.is_empty() {
        return Err(TrainError::EmptyBuffer);
    }
    let starts: Vec<usize> = buffer.episodes.iter().map(|e| (e.len() + 1).saturating_sub(length)).collect();
    let total: usize = starts.iter().sum();
    if total == 0 || length == 0 {
        return Err(TrainError::NoEligibleEpisode { length });
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u = rng.below(total);
        let mut e = 0;
        while u >= starts[e] {
            u -= starts[e];
            e += 1;
        }
        let ep = &buffer.episodes[e];
        let r = u..u + length;
        out.push(TrajectoryChunk {
            episode: buffer.episode_id(e),
            offset: u,
            observations: ep.observations[r.clone()].to_vec(),
            actions: ep.actions[r.clone()].to_vec(),
            rewards: ep.rewards[r].to_vec(),
        });
    }
    Ok(out)
}

/// Stack chunks chunk-major into observation, action and reward matrices.
pub fn stack_chunks(chunks: &[TrajectoryChunk]) -> (Matrix, Matrix, Matrix) {
    let rows: Vec<&Vec<f64>> = chunks.iter().flat_map(|c| c.observations.iter()).collect();
    let acts: Vec<&Vec<f64>> = chunks.iter().flat_map(|c| c.actions.iter()).collect();
    let rew: Vec<f64> = chunks.iter().flat_map(|c| c.rewards.iter().copied()).collect();
    let obs_dim = rows.first().map_or(0, |r| r.len());
    let act_dim = acts.first().map_or(0, |r| r.len());
    (
        Matrix::from_fn(rows.len(), obs_dim, |i, j| rows[i][j]),
        Matrix::from_fn(acts.len(), act_dim, |i, j| acts[i][j]),
        Matrix::column(&rew),
    )
}
