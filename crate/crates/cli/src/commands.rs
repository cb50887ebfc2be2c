use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use treegen::bench::{self, BenchConfig, BenchError, BenchMode, BenchReport, Comparison};
use treegen::llm::{record_session, replay_session, ChatTransport, HttpConfig, HttpTransport, RetryPolicy};
use treegen::orchestrator::{write_artifacts, Engine, OrchestratorError, OutcomeStatus, RunMetadata};
use treegen::{Sandbox, TaskSpec};

use crate::config::{Config, TransportMode};
use crate::{Invocation, ModeArg};

/// Exit code for a task that ran but was not solved.
const TASK_FAILED: u8 = 2;
/// Exit code when the environment (model endpoint, interpreter, files) failed.
const INFRASTRUCTURE: u8 = 3;

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infrastructure(String),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(TASK_FAILED),
            Failure::Infrastructure(_) => ExitCode::from(INFRASTRUCTURE),
        }
    }
}

fn infra(e: impl std::fmt::Display) -> Failure {
    Failure::Infrastructure(e.to_string())
}

/// Stored next to a recorded transcript as `<transcript>.session.json`.
#[derive(Debug, Serialize, Deserialize)]
struct SessionFile {
    invocation: Invocation,
    config_toml: String,
}

pub struct Session {
    pub invocation: Invocation,
    pub config: toml::Table,
}

fn session_path(transcript: &Path) -> PathBuf {
    let mut name = transcript.as_os_str().to_owned();
    name.push(".session.json");
    PathBuf::from(name)
}

pub fn read_session(transcript: &Path) -> Result<Session, Failure> {
    let path = session_path(transcript);
    let text = fs::read_to_string(&path)
        .map_err(|e| Failure::Usage(format!("cannot read session file {}: {e}", path.display())))?;
    let file: SessionFile =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let config = file
        .config_toml
        .parse::<toml::Table>()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(Session {
        invocation: file.invocation,
        config,
    })
}

fn transport(config: &Config, env: &BTreeMap<String, String>) -> Result<Box<dyn ChatTransport>, Failure> {
    let live = || -> Result<HttpTransport, Failure> {
        let endpoint = config.endpoint_url.clone().unwrap_or_default();
        let http = HttpConfig {
            api_key: env.get(&config.api_key_env).cloned().filter(|k| !k.is_empty()),
            retry: RetryPolicy {
                max_retries: config.max_retries,
                ..RetryPolicy::default()
            },
            request_timeout: config.request_timeout,
            ..HttpConfig::new(endpoint)
        };
        HttpTransport::new(http).map_err(infra)
    };
    let transcript = || config.transcript_path.clone().unwrap_or_default();
    Ok(match config.transport_mode {
        TransportMode::Live => Box::new(live()?),
        TransportMode::Record => {
            let path = transcript();
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(infra)?;
            }
            let sink = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| infra(format!("cannot open transcript {}: {e}", path.display())))?;
            Box::new(record_session(live()?, sink))
        }
        TransportMode::Replay => {
            let path = transcript();
            let file =
                File::open(&path).map_err(|e| infra(format!("cannot open transcript {}: {e}", path.display())))?;
            Box::new(replay_session(BufReader::new(file)).map_err(infra)?)
        }
    })
}

fn write_session(invocation: &Invocation, config: &Config) -> Result<(), Failure> {
    let Some(transcript) = &config.transcript_path else {
        return Ok(());
    };
    let file = SessionFile {
        invocation: invocation.clone(),
        config_toml: toml::to_string(&config.replayable()).map_err(infra)?,
    };
    let text = serde_json::to_string_pretty(&file).map_err(infra)? + "\n";
    fs::write(session_path(transcript), text).map_err(infra)
}

fn load_task(path: &Path) -> Result<TaskSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{} is not a valid task: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(infra)? + "\n";
    fs::write(path, text).map_err(infra)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn execute(invocation: &Invocation, config: &Config, env: &BTreeMap<String, String>) -> Result<ExitCode, Failure> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| infra(format!("cannot create {}: {e}", out.display())))?;
    fs::write(out.join("config.resolved.toml"), config.to_toml()).map_err(infra)?;
    if config.transport_mode == TransportMode::Record {
        write_session(invocation, config)?;
    }
    let transport = transport(config, env)?;
    let sandbox = Sandbox::new(config.sandbox()).map_err(infra)?;
    let started_at = now();
    let clock = Instant::now();
    let metadata = |clock: Instant, started_at: String| RunMetadata {
        started_at,
        finished_at: now(),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        model_name: config.model_name.clone(),
        node_durations: BTreeMap::new(),
    };
    let config_error = |e: OrchestratorError| Failure::Usage(e.to_string());

    match invocation {
        Invocation::Solve { task_file } => {
            let task = load_task(task_file)?;
            let engine = Engine::new(transport.as_ref(), &sandbox, config.engine());
            let outcome = engine.solve_task(&task).map_err(config_error)?;
            write_artifacts(out, &outcome, &metadata(clock, started_at)).map_err(infra)?;
            print!("{}", treegen::orchestrator::summary(&outcome));
            println!("artifacts: {}", out.display());
            Ok(match outcome.status {
                OutcomeStatus::Solved => ExitCode::SUCCESS,
                OutcomeStatus::InfrastructureFailed => ExitCode::from(INFRASTRUCTURE),
                _ => ExitCode::from(TASK_FAILED),
            })
        }
        Invocation::Decompose { task_file } => {
            let task = load_task(task_file)?;
            let engine = Engine::new(transport.as_ref(), &sandbox, config.engine());
            match engine.decompose(&task) {
                Ok((tree, log)) => {
                    let doc = tree.to_document();
                    write_json(&out.join("tree.json"), &doc)?;
                    let lines: String = log
                        .iter()
                        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
                        .collect();
                    fs::write(out.join("call_log.jsonl"), lines).map_err(infra)?;
                    println!("{}", serde_json::to_string_pretty(&doc).map_err(infra)?);
                    Ok(ExitCode::SUCCESS)
                }
                Err(OrchestratorError::Infrastructure(msg)) => Err(Failure::Infrastructure(msg)),
                Err(
                    e @ (OrchestratorError::DecompositionFailed { .. } | OrchestratorError::BudgetExhausted { .. }),
                ) => {
                    eprintln!("{e}");
                    Ok(ExitCode::from(TASK_FAILED))
                }
                Err(e) => Err(config_error(e)),
            }
        }
        Invocation::Bench { dataset, mode, limit } => {
            let mut tasks = if dataset == "humaneval" {
                bench::bundled_humaneval()
            } else {
                bench::load_tasks(Path::new(dataset)).map_err(|e| Failure::Usage(e.to_string()))?
            };
            if let Some(n) = limit {
                tasks.truncate(*n);
            }
            let modes: &[BenchMode] = match mode {
                ModeArg::OneShot => &[BenchMode::OneShot],
                ModeArg::Guided => &[BenchMode::Guided],
                ModeArg::Both => &[BenchMode::OneShot, BenchMode::Guided],
            };
            let bench_config = BenchConfig {
                engine: config.engine(),
                samples: config.samples_per_task,
                jobs: config.jobs,
            };
            let mut reports: Vec<BenchReport> = Vec::new();
            for m in modes {
                match bench::run_benchmark(&tasks, *m, transport.as_ref(), &sandbox, &bench_config) {
                    Ok(r) => reports.push(r),
                    Err(e @ BenchError::Infrastructure { .. }) => return Err(infra(e)),
                    Err(e) => return Err(Failure::Usage(e.to_string())),
                }
            }
            let pass = |m| reports.iter().find(|r| r.mode == m).and_then(|r| r.pass_at(1).ok());
            let comparison = match (pass(BenchMode::OneShot), pass(BenchMode::Guided)) {
                (Some(b), Some(f)) => Some(Comparison::new(b, f)),
                _ => None,
            };
            #[derive(Serialize)]
            struct ReportFile<'a> {
                dataset: &'a str,
                tasks: usize,
                pass_at_1: BTreeMap<String, f64>,
                comparison: Option<Comparison>,
                reports: &'a [BenchReport],
            }
            let table = bench::render_table(&reports);
            write_json(
                &out.join("bench_report.json"),
                &ReportFile {
                    dataset,
                    tasks: tasks.len(),
                    pass_at_1: reports
                        .iter()
                        .filter_map(|r| Some((r.mode.to_string(), r.pass_at(1).ok()?)))
                        .collect(),
                    comparison,
                    reports: &reports,
                },
            )?;
            fs::write(out.join("bench_summary.txt"), &table).map_err(infra)?;
            write_json(&out.join("run_metadata.json"), &metadata(clock, started_at))?;
            print!("{table}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
