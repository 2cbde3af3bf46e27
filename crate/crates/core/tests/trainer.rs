use d2e::envs::{EnvKind, Environment, Pendulum, PendulumParams};
use d2e::numerics::{Matrix, RngStream};
use d2e::trainer::*;
use proptest::prelude::*;
use rand::RngCore;

fn episode(len: usize, tag: f64) -> Episode {
    Episode {
        observations: (0..len).map(|t| vec![tag, t as f64]).collect(),
        actions: (0..len).map(|t| vec![(t as f64 / len as f64) - 0.5]).collect(),
        rewards: (0..len).map(|t| -(t as f64)).collect(),
    }
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("env", "pendulum"),
        ("seed", "3"),
        ("igmm.latent_dim", "3"),
        ("igmm.hidden", "16"),
        ("rgp.horizon", "2"),
        ("rgp.inducing", "6"),
        ("rgp.recognition_hidden", "8"),
        ("planner.hidden", "16"),
        ("train.seed_episodes", "2"),
        ("train.iterations", "4"),
        ("train.updates", "2"),
        ("train.batch_chunks", "3"),
        ("train.imagination_seeds", "3"),
        ("train.replay_chunks", "3"),
        ("train.ac_steps", "3"),
        ("train.ac_batch", "16"),
        ("train.eval_every", "2"),
        ("train.eval_episodes", "1"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

#[test]
fn buffer_evicts_whole_episodes_oldest_first() {
    let mut b = ReplayBuffer::new(25);
    b.push(episode(10, 0.0));
    b.push(episode(10, 1.0));
    assert_eq!((b.len(), b.steps()), (2, 20));
    b.push(episode(10, 2.0));
    assert_eq!((b.len(), b.steps()), (2, 20));
    let tags: Vec<f64> = b.episodes().map(|e| e.observations[0][0]).collect();
    assert_eq!(tags, vec![1.0, 2.0]);
    // An oversized episode still survives on its own.
    b.push(episode(40, 3.0));
    assert_eq!((b.len(), b.steps()), (1, 40));
    assert_eq!(b.episode_id(0), 3);
}

#[test]
fn chunk_sampling_errors() {
    let mut rng = RngStream::new(0);
    let empty = ReplayBuffer::new(100);
    assert!(matches!(sample_chunks(&empty, 1, 5, &mut rng), Err(TrainError::EmptyBuffer)));
    let mut b = ReplayBuffer::new(100);
    b.push(episode(4, 0.0));
    assert!(matches!(sample_chunks(&b, 1, 5, &mut rng), Err(TrainError::NoEligibleEpisode { length: 5 })));
    assert_eq!(sample_chunks(&b, 2, 4, &mut rng).unwrap().len(), 2);
}

#[test]
fn chunks_are_uniform_over_valid_starts() {
    let mut b = ReplayBuffer::new(1000);
    for (i, len) in [12, 15, 20].into_iter().enumerate() {
        b.push(episode(len, i as f64));
    }
    // 3 + 6 + 11 = 20 admissible (episode, start) pairs.
    let mut counts = std::collections::BTreeMap::new();
    let mut rng = RngStream::new(17);
    let draws = 40_000;
    for c in sample_chunks(&b, draws, 10, &mut rng).unwrap() {
        assert_eq!(c.observations.len(), 10);
        assert_eq!(c.observations[0], vec![c.episode as f64, c.offset as f64]);
        assert_eq!(c.rewards[9], -((c.offset + 9) as f64));
        *counts.entry((c.episode, c.offset)).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), 20);
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts.values().map(|&n| (n as f64 - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 19 degrees of freedom.
    assert!(chi2 < 43.82, "chi-square {chi2}");
}

#[test]
fn stacking_is_chunk_major() {
    let mut b = ReplayBuffer::new(100);
    b.push(episode(6, 0.0));
    let chunks = sample_chunks(&b, 2, 3, &mut RngStream::new(1)).unwrap();
    let (o, a, r) = stack_chunks(&chunks);
    assert_eq!((o.shape(), a.shape(), r.shape()), ((6, 2), (6, 1), (6, 1)));
    assert_eq!(o[(3, 1)], chunks[1].offset as f64);
}

#[test]
fn config_keys_round_trip_and_reject_bad_input() {
    let c = RunConfig::default();
    let mut d = RunConfig::default();
    for line in c.to_text().lines() {
        let (k, v) = line.split_once('=').unwrap();
        d.set(k, v).unwrap();
    }
    assert_eq!(c, d);
    d.set("planner.gamma", "0.9").unwrap();
    assert_eq!(d.planner.discount, 0.9);
    assert_eq!(d.get("planner.gamma").as_deref(), Some("0.9"));
    assert!(matches!(d.set("planner.gama", "0.9"), Err(ConfigError::UnknownKey(_))));
    assert!(matches!(d.set("rgp.horizon", "five"), Err(ConfigError::TypeMismatch { .. })));
    assert!(matches!(d.set("rgp.horizon", "-1"), Err(ConfigError::TypeMismatch { .. })));
    assert!(matches!(d.set("train.wall_time", "yes"), Err(ConfigError::TypeMismatch { .. })));
    assert!(matches!(d.set("env", "cartpole"), Err(ConfigError::TypeMismatch { .. })));
    assert!(matches!(d.set("seed", ""), Err(ConfigError::MissingRequired(_))));
}

#[test]
fn config_hash_ignores_output_location_only() {
    let a = RunConfig::default();
    let mut b = a.clone();
    b.out_dir = "elsewhere".into();
    assert_eq!(a.hash(), b.hash());
    b.set("train.lr", "0.002").unwrap();
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut c = Checkpoint::new([7u8; 32]);
    c.put("a", Matrix::from_fn(2, 3, |i, j| i as f64 - 0.5 * j as f64));
    c.put("empty", Matrix::zeros(0, 4));
    c.put_bits("bits", &[u64::MAX, 0, 0x7ff8_0000_dead_beef]);
    let bytes = c.to_bytes();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.get_bits("bits").unwrap(), vec![u64::MAX, 0, 0x7ff8_0000_dead_beef]);
    assert_eq!(back.get("a").unwrap(), c.get("a").unwrap());
    assert_eq!(back.to_bytes(), bytes);

    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(TrainError::CorruptCheckpoint(_))), "cut {cut}");
    }
    let mut flipped = bytes.clone();
    flipped[60] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(TrainError::CorruptCheckpoint(_))));
    let mut versioned = bytes.clone();
    versioned[4] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&versioned),
        Err(TrainError::VersionMismatch { found: 9, expected: CHECKPOINT_VERSION })
    ));
}

proptest! {
    #[test]
    fn checkpoint_arrays_survive_bit_exactly(
        arrays in proptest::collection::vec((0usize..4, 0usize..4, any::<u64>()), 0..6)
    ) {
        let mut c = Checkpoint::new([1u8; 32]);
        for (k, (r, cols, seed)) in arrays.iter().enumerate() {
            let mut rng = RngStream::new(*seed);
            c.put(format!("m{k}"), Matrix::from_fn(*r, *cols, |_, _| f64::from_bits(rng.next_u64())));
        }
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        prop_assert_eq!(back.arrays.len(), c.arrays.len());
        for ((n1, m1), (n2, m2)) in back.arrays.iter().zip(&c.arrays) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(m1.shape(), m2.shape());
            let same = m1.as_slice().iter().zip(m2.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}

#[test]
fn episodes_run_to_the_cap_in_the_unit_box() {
    let mut env = Pendulum::new(PendulumParams::default(), false);
    let ep = collect_episode(&mut env, &EpisodeSource::Random, &mut RngStream::new(2)).unwrap();
    assert_eq!(ep.len(), env.spec().episode_cap);
    assert!(ep.actions.iter().all(|a| a.len() == 1 && a[0].abs() <= 1.0));
    assert!(ep.rewards.iter().all(|r| *r <= 0.0));
    let again = collect_episode(&mut env, &EpisodeSource::Random, &mut RngStream::new(2)).unwrap();
    assert_eq!(ep, again);
}

fn seeded_agent(c: &RunConfig) -> (Agent, ReplayBuffer) {
    let spec = c.env.make().spec().clone();
    let agent = Agent::new(c, &spec, &mut RngStream::new(5)).unwrap();
    let mut buffer = ReplayBuffer::new(10_000);
    let mut rng = RngStream::new(6);
    for _ in 0..2 {
        let mut env = c.env.make();
        buffer.push(collect_episode(env.as_mut(), &EpisodeSource::Random, &mut rng).unwrap());
    }
    (agent, buffer)
}

#[test]
fn world_update_reports_clipping_and_respects_zero_rate() {
    let mut c = tiny_config();
    c.set("train.clip", "1e-9").unwrap();
    let (mut agent, buffer) = seeded_agent(&c);
    let m = agent.world_model_update(&buffer, &mut RngStream::new(1)).unwrap();
    assert!(m.clipped);
    assert_eq!(m.losses.len(), 2);
    assert!(m.losses.iter().all(|l| l.is_finite()));

    let mut c = tiny_config();
    c.set("train.clip", "1e9").unwrap();
    let (mut agent, buffer) = seeded_agent(&c);
    let m = agent.world_model_update(&buffer, &mut RngStream::new(1)).unwrap();
    assert!(!m.clipped);

    let (mut agent, buffer) = seeded_agent(&tiny_config());
    agent.world_opt.config.learning_rate = 0.0;
    agent.world_model_update(&buffer, &mut RngStream::new(1)).unwrap();
    let fresh = seeded_agent(&tiny_config()).0;
    // Only the data-driven initialisation of the GP layers may change values.
    let gp_prefix = |n: &str| n.starts_with("rgp.");
    for id in agent.world.ids() {
        if !gp_prefix(agent.world.name(id)) {
            assert_eq!(agent.world.get(id), fresh.world.get(id), "{}", agent.world.name(id));
        }
    }
}

#[test]
fn zero_rate_actor_critic_leaves_networks_unchanged() {
    let c = tiny_config();
    let (mut agent, buffer) = seeded_agent(&c);
    agent.world_model_update(&buffer, &mut RngStream::new(1)).unwrap();
    let batch = agent.imagination_batch(&buffer, &mut RngStream::new(2)).unwrap();
    // 3 imagined chunks × 2 steps + 3 replay chunks × 9 transitions.
    assert_eq!(batch.len(), 3 * 2 + 3 * 9);
    assert_eq!(batch.next_latent.len(), agent.planner.config.value_samples);
    for opt in [&mut agent.policy_opt, &mut agent.q_opt, &mut agent.v_opt] {
        opt.config.learning_rate = 0.0;
    }
    let before = agent.params.clone();
    let m = agent.actor_critic_update(&batch, &mut RngStream::new(3)).unwrap();
    assert!(m.pi.is_finite() && m.q.is_finite() && m.v.is_finite());
    assert_eq!(agent.params.policy, before.policy);
    assert_eq!(agent.params.q, before.q);
    assert_eq!(agent.params.v, before.v);
    // Blending equal values may round in the last bit.
    for (a, b) in agent.params.v_target.values().iter().zip(before.v_target.values()) {
        assert!(a.max_abs_diff(b) < 1e-12);
    }
}

#[test]
fn actor_critic_moves_parameters() {
    let (mut agent, buffer) = seeded_agent(&tiny_config());
    agent.world_model_update(&buffer, &mut RngStream::new(1)).unwrap();
    let batch = agent.imagination_batch(&buffer, &mut RngStream::new(2)).unwrap();
    let before = agent.params.clone();
    agent.actor_critic_update(&batch, &mut RngStream::new(3)).unwrap();
    assert_ne!(agent.params.policy, before.policy);
    assert_ne!(agent.params.q, before.q);
    assert_ne!(agent.params.v, before.v);
    assert_ne!(agent.params.v_target, before.v_target);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let c = tiny_config();
    let a = run_d2e(&c, &RunOptions::default()).unwrap();
    let b = run_d2e(&c, &RunOptions::default()).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.agent.world, b.agent.world);
    assert!(a.rows.iter().all(|r| r.wall_ms == 0 && r.seed == 3));
    let phases: Vec<&str> = a.rows.iter().map(|r| r.phase.as_str()).collect();
    assert_eq!(&phases[..5], &["seed", "world_model", "collect", "actor_critic", "world_model"]);
    assert_eq!(phases.iter().filter(|p| **p == "eval").count(), 2);
    let mut other = c.clone();
    other.seed = 4;
    let d = run_d2e(&other, &RunOptions::default()).unwrap();
    assert_ne!(a.rows, d.rows);
}

#[test]
fn interrupted_runs_resume_to_the_same_result() {
    let c = tiny_config();
    let whole = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let opts = |dir: &tempfile::TempDir| RunOptions { out_dir: Some(dir.path().into()), ..RunOptions::default() };
    let full = run_d2e(&c, &opts(&whole)).unwrap();
    assert!(!full.interrupted);

    let first = run_d2e(&c, &RunOptions { stop_after: Some(2), ..opts(&split) }).unwrap();
    assert!(first.interrupted);
    assert_eq!(first.completed, 2);
    let rest = run_d2e(&c, &RunOptions { resume: true, ..opts(&split) }).unwrap();
    assert_eq!(rest.completed, 4);
    assert_eq!(rest.rows.first().map(|r| r.iteration), Some(2));

    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&whole, "metrics.jsonl"), read(&split, "metrics.jsonl"));
    assert_eq!(read(&whole, "checkpoint.bin"), read(&split, "checkpoint.bin"));
    assert_eq!(full.agent.params.policy, rest.agent.params.policy);
    assert_eq!(full.buffer, rest.buffer);
    let config = String::from_utf8(read(&whole, "config.txt")).unwrap();
    assert!(config.contains("planner.gamma=0.999\n"));

    // A checkpoint only resumes under the configuration that wrote it.
    let mut changed = c.clone();
    changed.set("train.lr", "0.01").unwrap();
    assert!(matches!(run_d2e(&changed, &RunOptions { resume: true, ..opts(&split) }), Err(TrainError::ConfigMismatch)));

    // A damaged checkpoint is reported, not silently ignored.
    let path = split.path().join("checkpoint.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(run_d2e(&c, &RunOptions { resume: true, ..opts(&split) }), Err(TrainError::CorruptCheckpoint(_))));
}

#[test]
fn greedy_evaluation_is_reproducible() {
    let (agent, _) = seeded_agent(&tiny_config());
    let a = evaluate(&agent, EnvKind::Pendulum, 2, 9).unwrap();
    assert_eq!(a, evaluate(&agent, EnvKind::Pendulum, 2, 9).unwrap());
    let r = random_baseline(EnvKind::Pendulum, 2, 9).unwrap();
    assert_eq!(r.len(), 2);
}

#[test]
fn one_step_fit_of_a_linear_system() {
    // z_{t+1} = 0.8 z_t on a decaying, noiseless sequence.
    let seq: Vec<Vec<f64>> = (0..60).map(|t| vec![2.0 * 0.8f64.powi(t % 15) - 1.0]).collect();
    let data = d2e::envs::SequenceDataset { dim: 1, train: seq[..48].to_vec(), test: seq[48..].to_vec() };
    let base = d2e::rgp::RgpConfig { lag: 1, inducing: 8, ..Default::default() };
    let r = fit_sysid(&data, &base, 300, 0.02, &mut RngStream::new(1)).unwrap();
    assert_eq!(r.predictions.len(), 12);
    assert!(r.losses.last().unwrap() < r.losses.first().unwrap());
    assert!(r.rmse.is_finite());
}
