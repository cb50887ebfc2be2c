//! The solving pipeline: decompose a task, solve leaves, compose parents,
//! and assemble the final program.
//!
//! Nodes are processed in post-order. A parent is attempted only after all
//! of its children are verified, and it sees nothing of them but their
//! interfaces. Sibling subtrees are independent and may run on a thread
//! pool; the call log is merged in post-order regardless of scheduling.

mod artifacts;
mod assemble;
mod node;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{parse_tree_response, render_prompt, AgentKind, PromptBundle, PromptContext, Temperatures};
use crate::llm::{self, ChatMessage, ChatRequest, ChatTransport, Fingerprint, LlmError};
use crate::sandbox::{ExecLimits, Sandbox, TestReport};
use crate::solution::CandidateSolution;
use crate::tree::{leaves_postorder, NodeId, ProblemTree, TaskSpec, TreeCaps, TreeError};

pub use artifacts::{summary, write_artifacts, RunMetadata};
pub use assemble::{assemble_program, join_sources, AssemblyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Total decomposition attempts (including the first).
    pub decompose_retries: u32,
    pub attempts_per_node: u32,
    pub critic_rounds_per_attempt: u32,
    pub total_llm_calls_cap: u32,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            decompose_retries: 3,
            attempts_per_node: 4,
            critic_rounds_per_attempt: 1,
            total_llm_calls_cap: 200,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let fields = [
            ("decompose_retries", self.decompose_retries),
            ("attempts_per_node", self.attempts_per_node),
            ("critic_rounds_per_attempt", self.critic_rounds_per_attempt),
            ("total_llm_calls_cap", self.total_llm_calls_cap),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(OrchestratorError::InvalidBudget(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("invalid task: {0}")]
    InvalidTask(#[source] TreeError),
    #[error("decomposition failed after {attempts} attempts: {last_error}")]
    DecompositionFailed { attempts: u32, last_error: String },
    #[error("node {node_id} failed: {reason}")]
    NodeFailed {
        node_id: NodeId,
        reason: String,
        report: Option<Box<TestReport>>,
    },
    #[error("LLM call budget of {cap} calls exhausted")]
    BudgetExhausted { cap: u32 },
    #[error("infrastructure failure: {0}")]
    Infrastructure(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One LLM call, in the order calls were made for its node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    /// `None` for the decomposition call.
    pub node_id: Option<NodeId>,
    pub agent: AgentKind,
    pub fingerprint: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Solved,
    NodeFailed,
    DecompositionFailed,
    BudgetExhausted,
    InfrastructureFailed,
}

impl OutcomeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeStatus::Solved => "solved",
            OutcomeStatus::NodeFailed => "node_failed",
            OutcomeStatus::DecompositionFailed => "decomposition_failed",
            OutcomeStatus::BudgetExhausted => "budget_exhausted",
            OutcomeStatus::InfrastructureFailed => "infrastructure_failed",
        }
    }
}

impl std::fmt::Display for OutcomeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A node that exhausted its attempts (or the call budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node_id: NodeId,
    pub reason: String,
    pub report: Option<TestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub task_id: String,
    pub status: OutcomeStatus,
    pub tree: Option<ProblemTree>,
    /// The last candidate of every attempted node, verified or not.
    pub solutions: BTreeMap<NodeId, CandidateSolution>,
    pub final_program: Option<String>,
    pub call_log: Vec<CallRecord>,
    /// Nodes that failed, plus every ancestor of a failed node.
    pub failed_nodes: BTreeSet<NodeId>,
    pub failures: Vec<NodeFailure>,
    pub error: Option<String>,
}

impl SolveOutcome {
    fn new(task_id: &str, status: OutcomeStatus) -> Self {
        Self {
            task_id: task_id.to_string(),
            status,
            tree: None,
            solutions: BTreeMap::new(),
            final_program: None,
            call_log: Vec::new(),
            failed_nodes: BTreeSet::new(),
            failures: Vec::new(),
            error: None,
        }
    }

    pub fn is_solved(&self) -> bool {
        self.status == OutcomeStatus::Solved
    }

    pub fn llm_calls(&self) -> usize {
        self.call_log.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub model_name: String,
    pub max_tokens: u32,
    pub temperatures: Temperatures,
    pub budget: Budget,
    pub caps: TreeCaps,
    pub limits: ExecLimits,
    /// Worker threads for sibling subtrees; 1 runs everything inline.
    pub jobs: usize,
    /// Sample index stamped on every request (see `ChatRequest::sample`).
    pub sample: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            model_name: "gpt-3.5-turbo".to_string(),
            max_tokens: 2048,
            temperatures: Temperatures::default(),
            budget: Budget::default(),
            caps: TreeCaps::default(),
            limits: ExecLimits::default(),
            jobs: 1,
            sample: 0,
        }
    }
}

/// Per-run shared state: the call counter and the first infrastructure error.
pub(crate) struct Run {
    calls: AtomicU32,
    cap: u32,
    halted: Mutex<Option<String>>,
}

impl Run {
    fn new(cap: u32) -> Self {
        Self {
            calls: AtomicU32::new(0),
            cap,
            halted: Mutex::new(None),
        }
    }

    fn try_acquire(&self) -> bool {
        self.calls
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.cap).then_some(n + 1))
            .is_ok()
    }

    fn halt(&self, reason: String) {
        let mut h = self.halted.lock().expect("halt lock");
        h.get_or_insert(reason);
    }

    fn halted(&self) -> Option<String> {
        self.halted.lock().expect("halt lock").clone()
    }
}

pub(crate) enum CallError {
    Budget,
    Infra(String),
    Refusal(String),
}

/// Why one node ended without a verified candidate.
pub(crate) enum NodeError {
    Failed {
        reason: String,
        report: Option<Box<TestReport>>,
        candidate: Option<Box<CandidateSolution>>,
    },
    Budget,
    Infra(String),
}

impl From<CallError> for NodeError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Budget => NodeError::Budget,
            CallError::Infra(msg) => NodeError::Infra(msg),
            // Callers handle refusals themselves; reaching here is a bug in
            // the caller, but failing the node is the safe reading.
            CallError::Refusal(msg) => NodeError::Failed {
                reason: format!("model refused: {msg}"),
                report: None,
                candidate: None,
            },
        }
    }
}

/// Result of solving one node on its own (see [`Engine::solve_node`]).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRun {
    pub solution: CandidateSolution,
    pub call_log: Vec<CallRecord>,
}

pub struct Engine<'a> {
    transport: &'a dyn ChatTransport,
    sandbox: &'a Sandbox,
    config: EngineConfig,
}

#[derive(Default)]
struct Partial {
    solutions: BTreeMap<NodeId, CandidateSolution>,
    logs: BTreeMap<NodeId, Vec<CallRecord>>,
    failures: Vec<NodeFailure>,
    failed: BTreeSet<NodeId>,
    budget_hit: bool,
}

impl Partial {
    fn merge(&mut self, other: Partial) {
        self.solutions.extend(other.solutions);
        self.logs.extend(other.logs);
        self.failures.extend(other.failures);
        self.failed.extend(other.failed);
        self.budget_hit |= other.budget_hit;
    }
}

impl<'a> Engine<'a> {
    pub fn new(transport: &'a dyn ChatTransport, sandbox: &'a Sandbox, config: EngineConfig) -> Self {
        Self {
            transport,
            sandbox,
            config,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub(crate) fn call(
        &self,
        run: &Run,
        log: &mut Vec<CallRecord>,
        node_id: Option<&NodeId>,
        bundle: PromptBundle,
    ) -> Result<String, CallError> {
        if !run.try_acquire() {
            return Err(CallError::Budget);
        }
        let kind = bundle.agent_kind;
        let request = ChatRequest {
            messages: vec![ChatMessage::system(bundle.system), ChatMessage::user(bundle.user)],
            temperature: self.config.temperatures.for_kind(kind),
            max_tokens: self.config.max_tokens,
            model_name: self.config.model_name.clone(),
            request_tag: kind.request_tag().to_string(),
            sample: self.config.sample,
        };
        log.push(CallRecord {
            node_id: node_id.cloned(),
            agent: kind,
            fingerprint: request.fingerprint(),
            note: None,
        });
        tracing::debug!(agent = %kind, node = ?node_id, "llm call");
        match llm::complete(self.transport, &request) {
            Ok(response) => Ok(response.content),
            Err(LlmError::ModelRefusal(msg)) => Err(CallError::Refusal(msg)),
            Err(e) => Err(CallError::Infra(e.to_string())),
        }
    }

    /// Asks the generalist for a problem tree, retrying with the parse error
    /// as feedback.
    pub fn decompose(&self, task: &TaskSpec) -> Result<(ProblemTree, Vec<CallRecord>), OrchestratorError> {
        self.check(task)?;
        let run = Run::new(self.config.budget.total_llm_calls_cap);
        let mut log = Vec::new();
        let tree = self.decompose_in(&run, task, &mut log)?;
        Ok((tree, log))
    }

    fn check(&self, task: &TaskSpec) -> Result<(), OrchestratorError> {
        self.config.budget.validate()?;
        task.validate().map_err(OrchestratorError::InvalidTask)
    }

    fn decompose_in(
        &self,
        run: &Run,
        task: &TaskSpec,
        log: &mut Vec<CallRecord>,
    ) -> Result<ProblemTree, OrchestratorError> {
        let attempts = self.config.budget.decompose_retries;
        let mut feedback: Vec<String> = Vec::new();
        for _ in 0..attempts {
            let ctx = PromptContext::new(&task.target_language_tag)
                .task(task)
                .caps(self.config.caps)
                .feedback(&feedback);
            let bundle = render_prompt(AgentKind::GeneralistDecompose, &ctx)
                .map_err(|e| OrchestratorError::Infrastructure(e.to_string()))?;
            let text = match self.call(run, log, None, bundle) {
                Ok(text) => text,
                Err(CallError::Budget) => return Err(OrchestratorError::BudgetExhausted { cap: run.cap }),
                Err(CallError::Infra(msg)) => return Err(OrchestratorError::Infrastructure(msg)),
                Err(CallError::Refusal(msg)) => {
                    feedback.push(format!("The model returned an error: {msg}"));
                    continue;
                }
            };
            match parse_tree_response(&text, task, self.config.caps) {
                Ok(tree) => return Ok(tree),
                Err(e) => feedback.push(e.to_string()),
            }
        }
        Err(OrchestratorError::DecompositionFailed {
            attempts,
            last_error: feedback.pop().unwrap_or_default(),
        })
    }

    /// Solves one node whose children (if any) are already verified in
    /// `solutions`. Leaves and internal nodes differ only in the prompt: an
    /// internal node is composed from its children's interfaces.
    pub fn solve_node(
        &self,
        tree: &ProblemTree,
        node_id: &NodeId,
        solutions: &BTreeMap<NodeId, CandidateSolution>,
    ) -> Result<NodeRun, OrchestratorError> {
        self.check(&tree.task)?;
        let run = Run::new(self.config.budget.total_llm_calls_cap);
        let mut log = Vec::new();
        match self.solve_node_in(&run, tree, node_id, solutions, &mut log) {
            Ok(solution) => Ok(NodeRun {
                solution,
                call_log: log,
            }),
            Err(NodeError::Failed { reason, report, .. }) => Err(OrchestratorError::NodeFailed {
                node_id: node_id.clone(),
                reason,
                report,
            }),
            Err(NodeError::Budget) => Err(OrchestratorError::BudgetExhausted { cap: run.cap }),
            Err(NodeError::Infra(msg)) => Err(OrchestratorError::Infrastructure(msg)),
        }
    }

    /// The whole pipeline for one task. Configuration errors are returned as
    /// `Err`; everything that happens while solving ends up in the outcome.
    pub fn solve_task(&self, task: &TaskSpec) -> Result<SolveOutcome, OrchestratorError> {
        self.check(task)?;
        let run = Run::new(self.config.budget.total_llm_calls_cap);
        let mut log = Vec::new();
        match self.decompose_in(&run, task, &mut log) {
            Ok(tree) => Ok(self.solve_tree_in(&run, tree, log)),
            Err(e) => {
                let status = match e {
                    OrchestratorError::BudgetExhausted { .. } => OutcomeStatus::BudgetExhausted,
                    OrchestratorError::Infrastructure(_) => OutcomeStatus::InfrastructureFailed,
                    _ => OutcomeStatus::DecompositionFailed,
                };
                let mut outcome = SolveOutcome::new(&task.task_id, status);
                outcome.call_log = log;
                outcome.error = Some(e.to_string());
                Ok(outcome)
            }
        }
    }

    /// Solves a given tree without decomposing.
    pub fn solve_tree(&self, tree: ProblemTree) -> Result<SolveOutcome, OrchestratorError> {
        self.check(&tree.task)?;
        leaves_postorder(&tree)?;
        let run = Run::new(self.config.budget.total_llm_calls_cap);
        Ok(self.solve_tree_in(&run, tree, Vec::new()))
    }

    fn solve_tree_in(&self, run: &Run, tree: ProblemTree, mut call_log: Vec<CallRecord>) -> SolveOutcome {
        let order = leaves_postorder(&tree).expect("decomposed trees are valid");
        let partial = if self.config.jobs > 1 {
            match rayon::ThreadPoolBuilder::new().num_threads(self.config.jobs).build() {
                Ok(pool) => pool.install(|| self.solve_subtree(run, &tree, &tree.root_id)),
                Err(e) => {
                    tracing::warn!("thread pool unavailable ({e}); solving sequentially");
                    self.solve_subtree(run, &tree, &tree.root_id)
                }
            }
        } else {
            self.solve_subtree(run, &tree, &tree.root_id)
        };
        let Partial {
            solutions,
            mut logs,
            mut failures,
            failed,
            budget_hit,
        } = partial;
        for id in &order {
            if let Some(entries) = logs.remove(id) {
                call_log.extend(entries);
            }
        }
        let position: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, id)| (id, i)).collect();
        failures.sort_by_key(|f| position.get(&f.node_id).copied().unwrap_or(usize::MAX));

        let mut outcome = SolveOutcome::new(&tree.task.task_id, OutcomeStatus::Solved);
        if let Some(reason) = run.halted() {
            outcome.status = OutcomeStatus::InfrastructureFailed;
            outcome.error = Some(reason);
        } else if budget_hit {
            outcome.status = OutcomeStatus::BudgetExhausted;
            outcome.error = Some(format!("LLM call budget of {} calls exhausted", run.cap));
        } else if !failed.is_empty() {
            outcome.status = OutcomeStatus::NodeFailed;
            outcome.error = failures
                .first()
                .map(|f| format!("node {} failed: {}", f.node_id, f.reason));
        } else {
            match assemble_program(&tree, &solutions) {
                Ok(program) => {
                    outcome.final_program = Some(match tree.task.prelude.as_deref() {
                        Some(prelude) => format!("{}\n\n\n{program}", prelude.trim_end()),
                        None => program,
                    })
                }
                Err(e) => {
                    outcome.status = OutcomeStatus::NodeFailed;
                    outcome.error = Some(e.to_string());
                }
            }
        }
        outcome.tree = Some(tree);
        outcome.solutions = solutions;
        outcome.call_log = call_log;
        outcome.failed_nodes = failed;
        outcome.failures = failures;
        outcome
    }

    fn solve_subtree(&self, run: &Run, tree: &ProblemTree, id: &NodeId) -> Partial {
        let node = &tree.nodes[id];
        let parts: Vec<Partial> = if self.config.jobs > 1 {
            node.children
                .par_iter()
                .map(|c| self.solve_subtree(run, tree, c))
                .collect()
        } else {
            node.children.iter().map(|c| self.solve_subtree(run, tree, c)).collect()
        };
        let mut acc = Partial::default();
        for p in parts {
            acc.merge(p);
        }
        if node.children.iter().any(|c| acc.failed.contains(c)) || run.halted().is_some() {
            acc.failed.insert(id.clone());
            return acc;
        }
        let mut log = Vec::new();
        match self.solve_node_in(run, tree, id, &acc.solutions, &mut log) {
            Ok(solution) => {
                acc.solutions.insert(id.clone(), solution);
            }
            Err(NodeError::Failed {
                reason,
                report,
                candidate,
            }) => {
                tracing::info!(node = %id, "{reason}");
                acc.failures.push(NodeFailure {
                    node_id: id.clone(),
                    reason,
                    report: report.map(|r| *r),
                });
                if let Some(c) = candidate {
                    acc.solutions.insert(id.clone(), *c);
                }
                acc.failed.insert(id.clone());
            }
            Err(NodeError::Budget) => {
                acc.budget_hit = true;
                acc.failures.push(NodeFailure {
                    node_id: id.clone(),
                    reason: "LLM call budget exhausted".to_string(),
                    report: None,
                });
                acc.failed.insert(id.clone());
            }
            Err(NodeError::Infra(msg)) => {
                tracing::error!(node = %id, "{msg}");
                run.halt(msg);
                acc.failed.insert(id.clone());
            }
        }
        acc.logs.insert(id.clone(), log);
        acc
    }
}
