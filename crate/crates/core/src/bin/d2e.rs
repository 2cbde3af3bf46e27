use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use d2e::cli::{cmd_cluster, cmd_eval, cmd_plot, cmd_sysid, cmd_train, parse_config, CliError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "d2e", version, about = "Train and inspect latent world-model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seed episodes, then alternate model fitting, collection and imagined actor-critic updates.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value`, applied after the file; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Checkpoint and exit after this many completed iterations.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Greedy returns of a saved agent.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// One-step prediction error of the transition model on a simulated sequence.
    Sysid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Purity and occupied components on synthetic clustered data.
    Cluster {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Return and loss curves of one or more metrics files.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn print(record: &impl Serialize) {
    println!("{}", serde_json::to_string(record).expect("plain record"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, overrides, resume, stop_after } => {
            let c = parse_config(config.as_deref(), &overrides)?;
            print(&cmd_train(&c, resume, stop_after)?);
        }
        Command::Eval { checkpoint, episodes } => print(&cmd_eval(&checkpoint, episodes, None)?),
        Command::Sysid { config, overrides } => print(&cmd_sysid(&parse_config(config.as_deref(), &overrides)?)?),
        Command::Cluster { config, overrides } => print(&cmd_cluster(&parse_config(config.as_deref(), &overrides)?)?),
        Command::Plot { out, metrics } => {
            let n = cmd_plot(&metrics, &out)?;
            print(&serde_json::json!({ "command": "plot", "series": n, "out": out.display().to_string() }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.into()).record());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
