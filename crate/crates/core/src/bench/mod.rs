//! Functional-correctness benchmarking on HumanEval-style tasks.
//!
//! Two modes share one evaluator. `OneShot` asks the code agent once for the
//! whole function; `Guided` runs the full decomposition pipeline. Either way
//! the resulting program runs against the task's hidden `check` function,
//! which the generation side never sees.

mod dataset;
mod metrics;

use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{parse_code_response, render_prompt, AgentKind, PromptContext};
use crate::llm::{self, ChatMessage, ChatRequest, ChatTransport, LlmError};
use crate::orchestrator::{Engine, EngineConfig, OrchestratorError, OutcomeStatus};
use crate::sandbox::{Sandbox, TestReport};
use crate::tree::{NodeId, NodeKind, ProblemNode, TaskSpec};

pub use dataset::{bundled_humaneval, load_tasks, parse_tasks, BenchTask};
pub use metrics::{pass_at_k, Comparison};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record on line {line} lacks required field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("{0}")]
    Domain(String),
    #[error("benchmark aborted on {task_id}: {message}")]
    Infrastructure { task_id: String, message: String },
    #[error(transparent)]
    Config(#[from] OrchestratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    OneShot,
    Guided,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::OneShot => "one_shot",
            BenchMode::Guided => "guided",
        }
    }
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub engine: EngineConfig,
    /// Generations per task.
    pub samples: u32,
    /// Tasks evaluated concurrently.
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            samples: 1,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub passed: bool,
    /// Why no program was evaluated, or the evaluation status.
    pub status: String,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub samples: Vec<SampleResult>,
}

impl TaskResult {
    pub fn correct(&self) -> u64 {
        self.samples.iter().filter(|s| s.passed).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub model_name: String,
    pub samples_per_task: u32,
    pub tasks: Vec<TaskResult>,
}

impl BenchReport {
    /// Mean over tasks of the per-task pass@k estimate.
    pub fn pass_at(&self, k: u64) -> Result<f64, BenchError> {
        if self.tasks.is_empty() {
            return Err(BenchError::Domain("no tasks evaluated".into()));
        }
        let mut total = 0.0;
        for t in &self.tasks {
            total += pass_at_k(t.samples.len() as u64, t.correct(), k)?;
        }
        Ok(total / self.tasks.len() as f64)
    }

    pub fn solved_tasks(&self) -> usize {
        self.tasks.iter().filter(|t| t.correct() > 0).count()
    }

    pub fn llm_calls(&self) -> usize {
        self.tasks.iter().flat_map(|t| &t.samples).map(|s| s.llm_calls).sum()
    }
}

/// Runs `tasks` in `mode`. Infrastructure failures (unreachable model,
/// replay misses, missing interpreter) abort the run instead of counting as
/// wrong answers.
pub fn run_benchmark(
    tasks: &[BenchTask],
    mode: BenchMode,
    transport: &dyn ChatTransport,
    sandbox: &Sandbox,
    config: &BenchConfig,
) -> Result<BenchReport, BenchError> {
    config.engine.budget.validate()?;
    if config.samples == 0 {
        return Err(BenchError::Domain("samples must be positive".into()));
    }
    let one = |task: &BenchTask| -> Result<TaskResult, BenchError> {
        let mut samples = Vec::with_capacity(config.samples as usize);
        for sample in 0..config.samples {
            let mut engine_config = config.engine.clone();
            engine_config.sample = sample;
            engine_config.jobs = 1;
            let result = match mode {
                BenchMode::OneShot => one_shot(task, transport, sandbox, &engine_config)?,
                BenchMode::Guided => guided(task, transport, sandbox, engine_config)?,
            };
            tracing::info!(task = %task.task_id, sample, mode = %mode, passed = result.passed, "{}", result.status);
            samples.push(result);
        }
        Ok(TaskResult {
            task_id: task.task_id.clone(),
            samples,
        })
    };
    let results: Result<Vec<TaskResult>, BenchError> = if config.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| BenchError::Domain(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(one).collect())
    } else {
        tasks.iter().map(one).collect()
    };
    Ok(BenchReport {
        mode,
        model_name: config.engine.model_name.clone(),
        samples_per_task: config.samples,
        tasks: results?,
    })
}

/// Runs `program` against the task's `check` function, with the prompt's
/// preamble in front (guided programs already carry it; repeating imports
/// and helper definitions is harmless).
pub fn evaluate(
    task: &BenchTask,
    program: &str,
    sandbox: &Sandbox,
    config: &EngineConfig,
) -> Result<TestReport, BenchError> {
    let full = format!("{}{}", task.preamble(), program);
    sandbox
        .execute_candidate(&full, &task.test, Some(&task.entry_point), &config.limits)
        .map_err(|e| BenchError::Infrastructure {
            task_id: task.task_id.clone(),
            message: e.to_string(),
        })
}

fn scored(
    task: &BenchTask,
    program: String,
    llm_calls: usize,
    sandbox: &Sandbox,
    config: &EngineConfig,
) -> Result<SampleResult, BenchError> {
    let report = evaluate(task, &program, sandbox, config)?;
    Ok(SampleResult {
        passed: report.passed(),
        status: report.status.as_str().to_string(),
        llm_calls,
        program: Some(program),
    })
}

fn infra(task: &BenchTask, e: impl std::fmt::Display) -> BenchError {
    BenchError::Infrastructure {
        task_id: task.task_id.clone(),
        message: e.to_string(),
    }
}

fn one_shot(
    task: &BenchTask,
    transport: &dyn ChatTransport,
    sandbox: &Sandbox,
    config: &EngineConfig,
) -> Result<SampleResult, BenchError> {
    let node = ProblemNode {
        id: NodeId::new("root"),
        title: task.entry_point.clone(),
        description: task.prompt.clone(),
        interface_hint: Some(task.entry_point.clone()),
        children: Vec::new(),
        kind: NodeKind::Root,
    };
    let bundle =
        render_prompt(AgentKind::CodeLeaf, &PromptContext::new("python").node(&node)).map_err(|e| infra(task, e))?;
    let request = ChatRequest {
        messages: vec![ChatMessage::system(bundle.system), ChatMessage::user(bundle.user)],
        temperature: config.temperatures.for_kind(AgentKind::CodeLeaf),
        max_tokens: config.max_tokens,
        model_name: config.model_name.clone(),
        request_tag: AgentKind::CodeLeaf.request_tag().to_string(),
        sample: config.sample,
    };
    let text = match llm::complete(transport, &request) {
        Ok(r) => r.content,
        Err(LlmError::ModelRefusal(msg)) => {
            return Ok(SampleResult {
                passed: false,
                status: format!("refused: {msg}"),
                llm_calls: 1,
                program: None,
            })
        }
        Err(e) => return Err(infra(task, e)),
    };
    match parse_code_response(&text, Some(&task.entry_point)) {
        Ok(fragment) => scored(task, fragment.source, 1, sandbox, config),
        Err(e) => Ok(SampleResult {
            passed: false,
            status: format!("unusable reply: {e}"),
            llm_calls: 1,
            program: None,
        }),
    }
}

fn guided(
    task: &BenchTask,
    transport: &dyn ChatTransport,
    sandbox: &Sandbox,
    config: EngineConfig,
) -> Result<SampleResult, BenchError> {
    // The hidden tests never reach the TaskSpec.
    let spec = TaskSpec::new(task.task_id.clone(), task.prompt.clone())
        .with_entry_point(task.entry_point.clone())
        .with_prelude(task.preamble());
    let engine = Engine::new(transport, sandbox, config.clone());
    let outcome = engine.solve_task(&spec)?;
    let calls = outcome.llm_calls();
    if outcome.status == OutcomeStatus::InfrastructureFailed {
        return Err(infra(task, outcome.error.unwrap_or_default()));
    }
    match outcome.final_program {
        Some(program) => scored(task, program, calls, sandbox, &config),
        None => Ok(SampleResult {
            passed: false,
            status: outcome.status.as_str().to_string(),
            llm_calls: calls,
            program: None,
        }),
    }
}

/// A results table: one row per report, plus a comparison row when both a
/// one-shot and a guided report are present.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<24} {:>7} {:>9} {:>9}",
        "mode", "model", "tasks", "pass@1", "llm calls"
    );
    for r in reports {
        let pass = r
            .pass_at(1)
            .map(|p| format!("{:.2}%", 100.0 * p))
            .unwrap_or_else(|_| "n/a".into());
        let _ = writeln!(
            s,
            "{:<10} {:<24} {:>7} {:>9} {:>9}",
            r.mode.as_str(),
            r.model_name,
            r.tasks.len(),
            pass,
            r.llm_calls()
        );
    }
    let find = |m| reports.iter().find(|r| r.mode == m).and_then(|r| r.pass_at(1).ok());
    if let (Some(base), Some(framework)) = (find(BenchMode::OneShot), find(BenchMode::Guided)) {
        let c = Comparison::new(base, framework);
        let rel = c
            .relative_improvement_percent
            .map(|r| format!("{r:+.2}%"))
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "guided vs one_shot: {:+.2} pp absolute, {} relative",
            c.absolute_improvement_pp, rel
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedTransport;
    use crate::sandbox::SandboxConfig;

    fn task() -> BenchTask {
        parse_tasks(
            &serde_json::json!({
                "task_id": "T/0",
                "prompt": "from typing import List\n\n\ndef total(xs: List[int]) -> int:\n    \"\"\"Sum of xs.\n    >>> total([1, 2])\n    3\n    \"\"\"\n",
                "entry_point": "total",
                "test": "def check(candidate):\n    assert candidate([1, 2]) == 3\n    assert candidate([]) == 0\n",
            })
            .to_string(),
        )
        .unwrap()
        .remove(0)
    }

    const GOOD: &str =
        "```python\ndef total(xs: List[int]) -> int:\n    \"\"\"Sum of xs.\"\"\"\n    return sum(xs)\n```";
    const BAD: &str =
        "```python\ndef total(xs: List[int]) -> int:\n    \"\"\"Sum of xs.\"\"\"\n    return xs[0] + xs[1]\n```";

    #[test]
    fn one_shot_uses_preamble_and_hidden_check() {
        let sb = Sandbox::new(SandboxConfig::default()).unwrap();
        let model = ScriptedTransport::new().reply("code", &[], GOOD);
        let report = run_benchmark(&[task()], BenchMode::OneShot, &model, &sb, &BenchConfig::default()).unwrap();
        assert_eq!(report.pass_at(1).unwrap(), 1.0);
        assert_eq!(report.llm_calls(), 1);

        let model = ScriptedTransport::new().reply("code", &[], BAD);
        let report = run_benchmark(&[task()], BenchMode::OneShot, &model, &sb, &BenchConfig::default()).unwrap();
        assert_eq!(report.pass_at(1).unwrap(), 0.0);
        assert_eq!(report.tasks[0].samples[0].status, "error");

        let model = ScriptedTransport::new().reply("code", &[], "no code");
        let report = run_benchmark(&[task()], BenchMode::OneShot, &model, &sb, &BenchConfig::default()).unwrap();
        assert!(report.tasks[0].samples[0].status.starts_with("unusable reply"));
    }

    #[test]
    fn guided_never_sees_the_check_function() {
        let sb = Sandbox::new(SandboxConfig::default()).unwrap();
        let seen = std::sync::Mutex::new(String::new());
        let inner = ScriptedTransport::new()
            .reply(
                "generalist",
                &[],
                "```json\n{\"title\": \"total\", \"description\": \"-\"}\n```",
            )
            .reply("code", &[], GOOD)
            .reply("critic", &[], "VERDICT: APPROVE")
            .reply("tester", &[], "```python\nassert total([3]) == 3\n```");
        let model = llm::FnTransport(|req: &ChatRequest| {
            for m in &req.messages {
                seen.lock().unwrap().push_str(&m.content);
            }
            inner.send(req)
        });
        let report = run_benchmark(&[task()], BenchMode::Guided, &model, &sb, &BenchConfig::default()).unwrap();
        assert_eq!(report.pass_at(1).unwrap(), 1.0);
        assert_eq!(report.llm_calls(), 4);
        let seen = seen.into_inner().unwrap();
        assert!(!seen.contains("def check"));
        assert!(!seen.contains("candidate([])"));
    }

    #[test]
    fn infrastructure_failure_aborts() {
        let sb = Sandbox::new(SandboxConfig::default()).unwrap();
        let model = ScriptedTransport::new();
        for mode in [BenchMode::OneShot, BenchMode::Guided] {
            let err = run_benchmark(&[task()], mode, &model, &sb, &BenchConfig::default()).unwrap_err();
            assert!(matches!(err, BenchError::Infrastructure { .. }), "{err}");
        }
    }

    #[test]
    fn samples_are_distinct_requests() {
        let sb = Sandbox::new(SandboxConfig::default()).unwrap();
        let fingerprints = std::sync::Mutex::new(Vec::new());
        let inner = ScriptedTransport::new().reply("code", &[], GOOD);
        let model = llm::FnTransport(|req: &ChatRequest| {
            fingerprints.lock().unwrap().push(req.fingerprint());
            inner.send(req)
        });
        let config = BenchConfig {
            samples: 3,
            ..BenchConfig::default()
        };
        let report = run_benchmark(&[task(), task()], BenchMode::OneShot, &model, &sb, &config).unwrap();
        assert_eq!(report.tasks[0].samples.len(), 3);
        let mut f = fingerprints.into_inner().unwrap();
        assert_eq!(f.len(), 6);
        f.sort();
        f.dedup();
        assert_eq!(f.len(), 3);
    }

    #[test]
    fn table_has_comparison_row() {
        let mk = |mode, passes: &[bool]| BenchReport {
            mode,
            model_name: "m".into(),
            samples_per_task: 1,
            tasks: passes
                .iter()
                .enumerate()
                .map(|(i, p)| TaskResult {
                    task_id: format!("T/{i}"),
                    samples: vec![SampleResult {
                        passed: *p,
                        status: String::new(),
                        llm_calls: 1,
                        program: None,
                    }],
                })
                .collect(),
        };
        let table = render_table(&[
            mk(BenchMode::OneShot, &[true, false, false, false]),
            mk(BenchMode::Guided, &[true, true, false, false]),
        ]);
        assert!(table.contains("25.00%"));
        assert!(table.contains("50.00%"));
        assert!(table.contains("+25.00 pp absolute, +100.00% relative"), "{table}");
    }
}
