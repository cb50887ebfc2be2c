//! Writing a run's results to a directory.
//!
//! Everything except `run_metadata.json` is a pure function of the outcome
//! with execution times removed, so replayed runs produce byte-identical
//! files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SolveOutcome;
use crate::tree::NodeId;

/// Facts about the run that differ between otherwise identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_at: String,
    pub finished_at: String,
    pub elapsed_seconds: f64,
    pub model_name: String,
    /// Wall time of the deciding test run per node, in seconds.
    #[serde(default)]
    pub node_durations: BTreeMap<NodeId, f64>,
}

fn without_timing(outcome: &SolveOutcome) -> SolveOutcome {
    let mut o = outcome.clone();
    for sol in o.solutions.values_mut() {
        if let Some(r) = sol.report.as_mut() {
            r.duration = 0.0;
        }
    }
    for f in o.failures.iter_mut() {
        if let Some(r) = f.report.as_mut() {
            r.duration = 0.0;
        }
    }
    o
}

fn write_json(path: &Path, value: &impl Serialize) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn summary(outcome: &SolveOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task: {}", outcome.task_id);
    let _ = writeln!(s, "status: {}", outcome.status);
    let _ = writeln!(s, "llm calls: {}", outcome.llm_calls());
    if let Some(tree) = &outcome.tree {
        let leaves = tree.nodes.values().filter(|n| n.is_leaf()).count();
        let _ = writeln!(s, "nodes: {} ({} leaves)", tree.nodes.len(), leaves);
    }
    for (id, sol) in &outcome.solutions {
        let _ = writeln!(
            s,
            "  {id}: {} `{}` after {} attempt(s)",
            match sol.status {
                crate::solution::SolutionStatus::Verified => "verified",
                crate::solution::SolutionStatus::Failed => "failed",
                crate::solution::SolutionStatus::Unverified => "unverified",
            },
            sol.interface.name,
            sol.attempt_index
        );
    }
    for f in &outcome.failures {
        let _ = writeln!(s, "failed {}: {}", f.node_id, f.reason);
    }
    if let Some(e) = &outcome.error {
        let _ = writeln!(s, "error: {e}");
    }
    s
}

/// Writes `tree.json`, `nodes/<id>.py`, `call_log.jsonl`, `program.py` (when
/// solved), `outcome.json`, `summary.txt` and `run_metadata.json`.
pub fn write_artifacts(dir: &Path, outcome: &SolveOutcome, metadata: &RunMetadata) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(tree) = &outcome.tree {
        write_json(&dir.join("tree.json"), &tree.to_document())?;
    }
    if !outcome.solutions.is_empty() {
        let nodes = dir.join("nodes");
        fs::create_dir_all(&nodes)?;
        for (id, sol) in &outcome.solutions {
            fs::write(nodes.join(format!("{id}.py")), &sol.source)?;
        }
    }
    let mut log = String::new();
    for record in &outcome.call_log {
        log.push_str(&serde_json::to_string(record).map_err(io::Error::other)?);
        log.push('\n');
    }
    fs::write(dir.join("call_log.jsonl"), log)?;
    if let Some(program) = &outcome.final_program {
        fs::write(dir.join("program.py"), program)?;
    }
    write_json(&dir.join("outcome.json"), &without_timing(outcome))?;
    fs::write(dir.join("summary.txt"), summary(outcome))?;

    let mut metadata = metadata.clone();
    for (id, sol) in &outcome.solutions {
        if let Some(r) = &sol.report {
            metadata.node_durations.insert(id.clone(), r.duration);
        }
    }
    write_json(&dir.join("run_metadata.json"), &metadata)
}
