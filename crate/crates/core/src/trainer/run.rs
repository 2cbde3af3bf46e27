//! Episode collection, evaluation and the outer training loop.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::agent::{subsample, Agent};
use super::buffer::{Episode, ReplayBuffer};
use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::TrainError;
use crate::envs::{EnvKind, Environment};
use crate::numerics::{Matrix, RngState, RngStream};
use crate::planner::ActionMode;

pub enum EpisodeSource<'a> {
    /// Uniform actions over the unit box.
    Random,
    Agent(&'a Agent, ActionMode),
}

/// Run one episode to termination or the environment's step cap.
pub fn collect_episode(env: &mut dyn Environment, source: &EpisodeSource, rng: &mut RngStream) -> Result<Episode, TrainError> {
    let spec = env.spec().clone();
    let mut obs = env.reset(rng);
    let mut ep = Episode { observations: Vec::new(), actions: Vec::new(), rewards: Vec::new() };
    for _ in 0..spec.episode_cap {
        let unit = match source {
            EpisodeSource::Random => (0..spec.action_dim()).map(|_| 2.0 * rng.uniform() - 1.0).collect(),
            EpisodeSource::Agent(agent, mode) => agent.act(&obs, *mode, rng)?,
        };
        let step = env.step(&spec.scale_action(&unit))?;
        ep.observations.push(std::mem::replace(&mut obs, step.observation));
        ep.actions.push(unit);
        ep.rewards.push(step.reward);
        if step.done {
            break;
        }
    }
    Ok(ep)
}

fn eval_stream(seed: u64, k: usize) -> RngStream {
    RngStream::new(seed).split("evaluation").split(&format!("episode{k}"))
}

/// Returns of `episodes` greedy episodes. Episode `k` always starts from the
/// same state for a given `seed`.
pub fn evaluate(agent: &Agent, env: EnvKind, episodes: usize, seed: u64) -> Result<Vec<f64>, TrainError> {
    (0..episodes)
        .map(|k| {
            let mut e = env.make();
            Ok(collect_episode(e.as_mut(), &EpisodeSource::Agent(agent, ActionMode::Exploit), &mut eval_stream(seed, k))?.total_reward())
        })
        .collect()
}

/// Returns of uniformly random actions from the same start states as [`evaluate`].
pub fn random_baseline(env: EnvKind, episodes: usize, seed: u64) -> Result<Vec<f64>, TrainError> {
    (0..episodes)
        .map(|k| {
            let mut e = env.make();
            Ok(collect_episode(e.as_mut(), &EpisodeSource::Random, &mut eval_stream(seed, k))?.total_reward())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub phase: String,
    pub losses: BTreeMap<String, f64>,
    pub eval_return: Option<f64>,
    pub wall_ms: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Metrics, the effective config and checkpoints go here.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/checkpoint.bin` when it exists.
    pub resume: bool,
    /// Stop (after checkpointing) once this many iterations are complete.
    pub stop_after: Option<usize>,
}

pub struct RunReport {
    /// Rows produced by this invocation.
    pub rows: Vec<MetricsRow>,
    pub completed: usize,
    pub interrupted: bool,
    pub final_eval: Option<Vec<f64>>,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
}

const CHECKPOINT_FILE: &str = "checkpoint.bin";
const METRICS_FILE: &str = "metrics.jsonl";

struct Sink {
    file: Option<File>,
    rows: Vec<MetricsRow>,
    written: usize,
    seed: u64,
    wall: bool,
}

impl Sink {
    fn emit(&mut self, iteration: usize, phase: &str, losses: &[(&str, f64)], eval_return: Option<f64>, since: Instant) -> Result<(), TrainError> {
        let row = MetricsRow {
            iteration,
            phase: phase.into(),
            losses: losses.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            eval_return,
            wall_ms: if self.wall { since.elapsed().as_millis() as u64 } else { 0 },
            seed: self.seed,
        };
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", serde_json::to_string(&row)?)?;
        }
        self.rows.push(row);
        self.written += 1;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64).sqrt()
}

struct Progress {
    next_iteration: usize,
    rows_written: usize,
    master: RngState,
}

fn snapshot(agent: &Agent, buffer: &ReplayBuffer, progress: &Progress) -> Checkpoint {
    let mut c = Checkpoint::new(agent.config.hash());
    let counter = progress.master.counter;
    c.put_bits(
        "meta",
        &[
            progress.next_iteration as u64,
            progress.rows_written as u64,
            agent.inducing_ready as u64,
            buffer.appended() as u64,
            progress.master.seed,
            counter as u64,
            (counter >> 64) as u64,
        ],
    );
    c.put("normalizer", Matrix::from_rows(&[agent.obs_shift.clone(), agent.obs_scale.clone()]).expect("equal widths"));
    c.put_store("world", &agent.world);
    c.put_store("policy", &agent.params.policy);
    c.put_store("q", &agent.params.q);
    c.put_store("v", &agent.params.v);
    c.put_store("v_target", &agent.params.v_target);
    c.put_adam("adam.world", &agent.world_opt);
    c.put_adam("adam.policy", &agent.policy_opt);
    c.put_adam("adam.q", &agent.q_opt);
    c.put_adam("adam.v", &agent.v_opt);
    c.put_bits("buffer.count", &[buffer.len() as u64]);
    let stack = |v: &[Vec<f64>]| Matrix::from_fn(v.len(), v.first().map_or(0, Vec::len), |i, j| v[i][j]);
    for (k, ep) in buffer.episodes().enumerate() {
        c.put(format!("buffer/{k}/obs"), stack(&ep.observations));
        c.put(format!("buffer/{k}/act"), stack(&ep.actions));
        c.put(format!("buffer/{k}/rew"), Matrix::column(&ep.rewards));
    }
    c
}

fn restore(c: &Checkpoint, agent: &mut Agent) -> Result<(ReplayBuffer, Progress), TrainError> {
    if c.config_hash != agent.config.hash() {
        return Err(TrainError::ConfigMismatch);
    }
    let meta = c.get_bits("meta")?;
    if meta.len() != 7 {
        return Err(TrainError::CorruptCheckpoint("meta record".into()));
    }
    let norm = c.get("normalizer")?;
    if norm.shape() != (2, agent.obs_shift.len()) {
        return Err(TrainError::CorruptCheckpoint("normalizer shape".into()));
    }
    agent.obs_shift = norm.row_slice(0).to_vec();
    agent.obs_scale = norm.row_slice(1).to_vec();
    c.load_store("world", &mut agent.world)?;
    c.load_store("policy", &mut agent.params.policy)?;
    c.load_store("q", &mut agent.params.q)?;
    c.load_store("v", &mut agent.params.v)?;
    c.load_store("v_target", &mut agent.params.v_target)?;
    c.load_adam("adam.world", &mut agent.world_opt)?;
    c.load_adam("adam.policy", &mut agent.policy_opt)?;
    c.load_adam("adam.q", &mut agent.q_opt)?;
    c.load_adam("adam.v", &mut agent.v_opt)?;
    agent.inducing_ready = meta[2] != 0;
    let count = c.get_bits("buffer.count")?.first().copied().unwrap_or(0) as usize;
    let rows = |m: &Matrix| (0..m.rows()).map(|i| m.row_slice(i).to_vec()).collect::<Vec<_>>();
    let mut episodes = Vec::with_capacity(count);
    for k in 0..count {
        let rew = c.get(&format!("buffer/{k}/rew"))?;
        episodes.push(Episode {
            observations: rows(c.get(&format!("buffer/{k}/obs"))?),
            actions: rows(c.get(&format!("buffer/{k}/act"))?),
            rewards: rew.as_slice().to_vec(),
        });
    }
    let buffer = ReplayBuffer::restore(episodes, agent.config.train.buffer_capacity, meta[3] as usize);
    let progress = Progress {
        next_iteration: meta[0] as usize,
        rows_written: meta[1] as usize,
        master: RngState { seed: meta[4], counter: meta[5] as u128 | (meta[6] as u128) << 64 },
    };
    Ok((buffer, progress))
}

/// Rebuild the agent saved at `path` by a run of `config`.
pub fn load_agent(config: &RunConfig, path: &Path) -> Result<Agent, TrainError> {
    let spec = config.env.make().spec().clone();
    let mut agent = Agent::new(config, &spec, &mut RngStream::new(config.seed).split("init"))?;
    restore(&Checkpoint::load(path)?, &mut agent)?;
    Ok(agent)
}

/// Keep only the first `rows` lines of the metrics file.
fn truncate_metrics(path: &PathBuf, rows: usize) -> Result<(), TrainError> {
    let mut kept = String::new();
    if path.exists() {
        for line in BufReader::new(File::open(path)?).lines().take(rows) {
            kept.push_str(&line?);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

/// Seed episodes, then alternate world-model updates, one exploratory
/// episode, imagination and actor-critic updates.
pub fn run_d2e(config: &RunConfig, options: &RunOptions) -> Result<RunReport, TrainError> {
    let env_kind = config.env;
    let spec = env_kind.make().spec().clone();
    let init = RngStream::new(config.seed);
    let mut agent = Agent::new(config, &spec, &mut init.split("init"))?;
    let t = agent.config.train.clone();
    let mut master = init.split("run");
    let mut buffer = ReplayBuffer::new(t.buffer_capacity);
    let mut start = 0;
    let mut written = 0;
    let mut resumed = false;

    if let Some(dir) = &options.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), agent.config.to_text())?;
        let ck = dir.join(CHECKPOINT_FILE);
        if options.resume && ck.exists() {
            let (b, p) = restore(&Checkpoint::load(&ck)?, &mut agent)?;
            buffer = b;
            start = p.next_iteration;
            written = p.rows_written;
            master = RngStream::from_state(p.master);
            resumed = true;
        }
        truncate_metrics(&dir.join(METRICS_FILE), written)?;
    }
    let file = match &options.out_dir {
        Some(dir) => Some(OpenOptions::new().append(true).create(true).open(dir.join(METRICS_FILE))?),
        None => None,
    };
    let mut sink = Sink { file, rows: Vec::new(), written, seed: config.seed, wall: t.wall_time };

    if !resumed {
        let clock = Instant::now();
        let mut rng = master.split("seed_episodes");
        let mut returns = Vec::with_capacity(t.seed_episodes);
        for _ in 0..t.seed_episodes {
            let mut env = env_kind.make();
            let ep = collect_episode(env.as_mut(), &EpisodeSource::Random, &mut rng)?;
            returns.push(ep.total_reward());
            buffer.push(ep);
        }
        agent.fit_normalizer(&buffer);
        sink.emit(0, "seed", &[("episodes", t.seed_episodes as f64), ("mean_return", mean(&returns))], None, clock)?;
    }

    let save = |agent: &Agent, buffer: &ReplayBuffer, next: usize, rows: usize, master: &RngStream| -> Result<(), TrainError> {
        if let Some(dir) = &options.out_dir {
            let p = Progress { next_iteration: next, rows_written: rows, master: master.state() };
            snapshot(agent, buffer, &p).save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    };

    let mut final_eval = None;
    let mut completed = start;
    for it in start..t.iterations {
        let mut rng = master.split(&format!("iteration{it}"));
        let clock = Instant::now();
        let wm = agent.world_model_update(&buffer, &mut rng)?;
        sink.emit(
            it,
            "world_model",
            &[
                ("loss", *wm.losses.last().unwrap_or(&f64::NAN)),
                ("loss_mean", mean(&wm.losses)),
                ("vae", wm.vae),
                ("rgp", wm.rgp),
                ("grad_norm", wm.grad_norm),
                ("clipped", wm.clipped as u8 as f64),
            ],
            None,
            clock,
        )?;

        let clock = Instant::now();
        let mut env = env_kind.make();
        let ep = collect_episode(env.as_mut(), &EpisodeSource::Agent(&agent, ActionMode::Explore), &mut rng)?;
        sink.emit(it, "collect", &[("return", ep.total_reward()), ("steps", ep.len() as f64)], None, clock)?;
        buffer.push(ep);

        let clock = Instant::now();
        let pool = agent.imagination_batch(&buffer, &mut rng)?;
        let mut acc = [0.0; 3];
        for _ in 0..t.ac_steps {
            let mb = subsample(&pool, t.ac_batch, &mut rng);
            let m = agent.actor_critic_update(&mb, &mut rng)?;
            acc[0] += m.pi;
            acc[1] += m.q;
            acc[2] += m.v;
        }
        let n = t.ac_steps.max(1) as f64;
        sink.emit(it, "actor_critic", &[("pi", acc[0] / n), ("q", acc[1] / n), ("v", acc[2] / n), ("batch", pool.len() as f64)], None, clock)?;

        let last = it + 1 == t.iterations;
        if t.eval_every > 0 && ((it + 1) % t.eval_every == 0 || last) {
            let clock = Instant::now();
            let returns = evaluate(&agent, env_kind, t.eval_episodes, config.seed)?;
            sink.emit(it, "eval", &[("return_sd", sd(&returns))], Some(mean(&returns)), clock)?;
            if last {
                final_eval = Some(returns);
            }
        }
        completed = it + 1;
        let stop = options.stop_after == Some(completed);
        if last || stop || (t.checkpoint_every > 0 && completed % t.checkpoint_every == 0) {
            save(&agent, &buffer, completed, sink.written, &master)?;
        }
        if stop && !last {
            return Ok(RunReport { rows: sink.rows, completed, interrupted: true, final_eval, agent, buffer });
        }
    }
    if t.iterations == 0 || start >= t.iterations {
        save(&agent, &buffer, completed, sink.written, &master)?;
    }
    Ok(RunReport { rows: sink.rows, completed, interrupted: false, final_eval, agent, buffer })
}
