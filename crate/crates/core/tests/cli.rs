use std::path::Path;
use std::process::Command;

use d2e::cli::*;
use d2e::envs::EnvKind;
use d2e::trainer::{random_baseline, ConfigError, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_d2e");

fn tiny(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.in");
    let text = format!(
        "# small run\nseed = 4\nout_dir={}\n\ntrain.seed_episodes=2\ntrain.iterations=2\ntrain.updates=2\ntrain.batch_chunks=3\n\
         train.imagination_seeds=3\ntrain.replay_chunks=3\ntrain.ac_steps=2\ntrain.ac_batch=16\ntrain.eval_episodes=1\n\
         igmm.latent_dim=3\nigmm.hidden=16\nrgp.horizon=2\nrgp.inducing=6\nplanner.hidden=16\n{extra}",
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn empty_file_gives_the_defaults() {
    let c = parse_config_from("", None, &[]).unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!((c.rgp.horizon, c.rgp.lag, c.train.chunk_length, c.train.batch_chunks), (5, 2, 10, 50));
}

#[test]
fn overrides_win_over_file_and_seed_variable() {
    let c = parse_config_from("planner.gamma=0.5\nseed=1\n", Some("7"), &["planner.gamma=0.9".into()]).unwrap();
    assert_eq!(c.planner.discount, 0.9);
    assert_eq!(c.seed, 7);
    let c = parse_config_from("seed=1", Some("7"), &["seed=8".into()]).unwrap();
    assert_eq!(c.seed, 8);
}

#[test]
fn parse_errors_are_typed() {
    let kind = |text: &str, o: &[&str]| {
        let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
        parse_config_from(text, None, &o).unwrap_err().kind()
    };
    assert_eq!(kind("planner.gamma=yes", &[]), "TypeMismatch");
    assert_eq!(kind("", &["planner.gamma=yes"]), "TypeMismatch");
    assert_eq!(kind("planner.gammma=0.9", &[]), "UnknownKey");
    assert_eq!(kind("seed=", &[]), "MissingRequired");
    assert_eq!(kind("# ok\nseed", &[]), "Syntax");
    assert_eq!(kind("", &["seed"]), "Usage");
    let mut c = RunConfig::default();
    assert!(matches!(apply_text(&mut c, "a\n"), Err(ConfigError::Syntax { line: 1 })));
}

#[test]
fn error_records_are_single_line_json() {
    let e = parse_config_from("x=1\ny=2", None, &[]).unwrap_err();
    let r = e.record();
    assert!(!r.contains('\n'));
    let v: serde_json::Value = serde_json::from_str(&r).unwrap();
    assert_eq!(v["error"], "UnknownKey");
    assert!(v["message"].as_str().unwrap().contains('x'));
}

#[test]
fn binary_reports_failures_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    let out = Command::new(BIN).args(["train", "--config"]).arg(&cfg).args(["--set", "planner.gamma=yes"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "TypeMismatch");

    let out = Command::new(BIN).args(["eval", "--checkpoint"]).arg(dir.path().join("missing.bin")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(v["error"], "Usage");
}

#[test]
fn training_twice_rewrites_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    let run = || {
        let out = Command::new(BIN).args(["train", "--config"]).arg(&cfg).env_remove(SEED_VAR).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(out.stdout.trim_ascii()).unwrap();
        assert_eq!(v["iterations"], 2);
        ["metrics.jsonl", "checkpoint.bin", "config.txt"].map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap())
    };
    let first = run();
    assert_eq!(first, run());
    let echoed = String::from_utf8(first[2].clone()).unwrap();
    assert!(echoed.contains("seed=4\n") && echoed.contains("rgp.horizon=2\n"));

    // The seed variable reaches the run.
    let out = Command::new(BIN).args(["train", "--config"]).arg(&cfg).env(SEED_VAR, "11").output().unwrap();
    assert!(out.status.success());
    let echoed = std::fs::read_to_string(dir.path().join("out/config.txt")).unwrap();
    assert!(echoed.contains("seed=11\n"));
}

#[test]
fn untrained_agent_evaluates_like_the_random_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "train.iterations=0\n");
    let c = parse_config_from(&std::fs::read_to_string(&cfg).unwrap(), None, &[]).unwrap();
    cmd_train(&c, false, None).unwrap();
    let eval = cmd_eval(&dir.path().join("out/checkpoint.bin"), 10, None).unwrap();
    assert_eq!(eval.returns.len(), 10);
    let random = random_baseline(EnvKind::Pendulum, 10, c.seed).unwrap();
    let n = random.len() as f64;
    let m = random.iter().sum::<f64>() / n;
    let var = random.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0);
    let se = ((var + eval.sd * eval.sd) / n).sqrt();
    assert!((eval.mean - m).abs() <= 3.0 * se, "untrained {} vs random {m} ± {se}", eval.mean);
}

#[test]
fn eval_rejects_damaged_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "train.iterations=0\n");
    let c = parse_config_from(&std::fs::read_to_string(&cfg).unwrap(), None, &[]).unwrap();
    cmd_train(&c, false, None).unwrap();
    let ck = dir.path().join("out/checkpoint.bin");
    let bytes = std::fs::read(&ck).unwrap();
    std::fs::write(&ck, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(cmd_eval(&ck, 1, None).unwrap_err().kind(), "CorruptCheckpoint");
}

#[test]
fn plot_has_one_labelled_series_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for seed in [1, 2] {
        let path = dir.path().join(format!("m{seed}.jsonl"));
        let rows: String = (0..5)
            .flat_map(|it| {
                [
                    format!(r#"{{"iteration":{it},"phase":"world_model","losses":{{"loss_mean":{}}},"eval_return":null,"wall_ms":0,"seed":{seed}}}"#, 5.0 - it as f64),
                    format!(r#"{{"iteration":{it},"phase":"eval","losses":{{"return_sd":1.0}},"eval_return":{},"wall_ms":0,"seed":{seed}}}"#, -100.0 * (seed + it) as f64),
                ]
            })
            .map(|l| l + "\n")
            .collect();
        std::fs::write(&path, rows).unwrap();
        files.push(path);
    }
    let out = dir.path().join("plot/curves.svg");
    assert_eq!(cmd_plot(&files, &out).unwrap(), 2);
    let svg = std::fs::read_to_string(&out).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches(r#"class="series""#).count(), 4);
    assert_eq!(svg.matches(r#"class="legend""#).count(), 2);
    assert!(svg.contains("seed 1 (") && svg.contains("seed 2 ("));
    assert_eq!(svg.matches(r#"class="band""#).count(), 2);

    std::fs::write(&files[0], "{not json}\n").unwrap();
    assert_eq!(cmd_plot(&files, &out).unwrap_err().kind(), "BadMetrics");
    assert_eq!(cmd_plot(&[], &out).unwrap_err().kind(), "Usage");
}

#[test]
fn sysid_and_cluster_commands_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let c = parse_config_from("", None, &[format!("out_dir={out}"), "sysid.steps=30".into(), "rgp.inducing=8".into()]).unwrap();
    let s = cmd_sysid(&c).unwrap();
    assert!(s.rmse.is_finite() && s.test_steps == 100);
    assert!(dir.path().join("sysid.json").exists());

    let c = parse_config_from("", None, &[format!("out_dir={out}"), "cluster.points=90".into(), "cluster.steps=20".into(), "cluster.warmup_steps=10".into()]).unwrap();
    let r = cmd_cluster(&c).unwrap();
    assert!((0.0..=1.0).contains(&r.purity));
    assert_eq!(r.mean_weights.len(), c.igmm.truncation);
    assert!(dir.path().join("cluster.json").exists());
}
