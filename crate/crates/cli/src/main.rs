mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tracing_subscriber::EnvFilter;

use crate::commands::Failure;

#[derive(Parser)]
#[command(
    name = "treegen",
    version,
    about = "Decompose coding tasks into a problem tree and solve them bottom-up"
)]
struct Cli {
    /// Flat TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Set any config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, value_name = "URL")]
    endpoint_url: Option<String>,
    #[arg(long, global = true, value_name = "NAME")]
    model: Option<String>,
    /// live, record or replay.
    #[arg(long, global = true, value_name = "MODE")]
    transport: Option<String>,
    #[arg(long, global = true, value_name = "FILE")]
    transcript: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// Concurrent tasks (bench) or sibling subtrees (solve).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Sandbox wall-clock limit per execution, in seconds.
    #[arg(long, global = true, value_name = "SECS")]
    timeout: Option<f64>,
    /// Repeat for more log output (info, debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task through the full pipeline.
    Solve { task_file: PathBuf },
    /// Decompose one task and print the problem tree.
    Decompose { task_file: PathBuf },
    /// Measure Pass@1 on a HumanEval-style dataset (`humaneval` for the bundled one).
    Bench {
        dataset: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        /// Only the first N tasks.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Re-run the session recorded in a transcript, offline.
    Replay { transcript: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    OneShot,
    Guided,
    Both,
}

/// A command with its arguments, as stored next to a recorded transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Solve {
        task_file: PathBuf,
    },
    Decompose {
        task_file: PathBuf,
    },
    Bench {
        dataset: String,
        mode: ModeArg,
        limit: Option<usize>,
    },
}

impl Cli {
    fn flags(&self) -> Result<config::FlagLayer, Failure> {
        let mut flags = config::FlagLayer::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
            flags.push((k.trim().to_string(), v.to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                flags.push((k.to_string(), v));
            }
        };
        push("endpoint_url", self.endpoint_url.clone());
        push("model_name", self.model.clone());
        push("transport_mode", self.transport.clone());
        push(
            "transcript_path",
            self.transcript.as_ref().map(|p| p.display().to_string()),
        );
        push("output_dir", self.output_dir.as_ref().map(|p| p.display().to_string()));
        push("jobs", self.jobs.map(|j| j.to_string()));
        push("timeout", self.timeout.map(|t| t.to_string()));
        Ok(flags)
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let env: BTreeMap<String, String> = std::env::vars().collect();
    let mut flags = cli.flags()?;
    let file = cli
        .config
        .as_deref()
        .map(config::file_layer)
        .transpose()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let (invocation, file) = match cli.command {
        Command::Solve { task_file } => (Invocation::Solve { task_file }, file),
        Command::Decompose { task_file } => (Invocation::Decompose { task_file }, file),
        Command::Bench { dataset, mode, limit } => (Invocation::Bench { dataset, mode, limit }, file),
        Command::Replay { transcript } => {
            let session = commands::read_session(&transcript)?;
            // Recorded settings stand in for the config file; the transport
            // is forced to replay from the given transcript.
            flags.push(("transport_mode".into(), "replay".into()));
            flags.push(("transcript_path".into(), transcript.display().to_string()));
            (session.invocation, Some(session.config))
        }
    };
    let config = config::load_config(file.as_ref(), &env, &flags).map_err(|e| Failure::Usage(e.to_string()))?;
    commands::execute(&invocation, &config, &env)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
