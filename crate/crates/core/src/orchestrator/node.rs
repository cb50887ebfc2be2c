//! The attempt loop for one node: generate, review, test, retry with
//! feedback.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use super::{join_sources, CallError, CallRecord, Engine, NodeError, Run};
use crate::agents::python::top_level_names;
use crate::agents::{
    parse_code_response, parse_critic_response, parse_tests_response, render_prompt, AgentKind, CritiqueVerdict,
    GeneratedTests, PromptBundle, PromptContext, Verdict,
};
use crate::sandbox::{TestReport, TestStatus, SCRIPT_NAME};
use crate::solution::{CandidateSolution, FunctionInterface, SolutionStatus};
use crate::tree::{composition_context, NodeId, ProblemNode, ProblemTree};

/// What a node may build on: the verified code of its descendants.
struct Provided {
    /// Descendant sources joined in post-order; empty for leaves.
    program: String,
    names: BTreeSet<String>,
}

enum SuiteOutcome {
    /// The suite ran and decided the candidate.
    Ran(TestReport),
    /// No usable suite; the candidate still has to run cleanly.
    Unavailable,
}

fn frame_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let file = regex::escape(SCRIPT_NAME);
        Regex::new(&format!(r#"File "(?:[^"]*/)?{file}", line (\d+)"#)).expect("frame regex")
    })
}

/// Whether an error report points into the test code rather than the
/// program: the innermost traceback frame lies after the program's lines.
fn error_in_tests(report: &TestReport, program: &str) -> bool {
    let program_lines = program.trim_end().lines().count();
    frame_regex()
        .captures_iter(&report.stderr_excerpt)
        .last()
        .and_then(|c| c[1].parse::<usize>().ok())
        .is_some_and(|line| line > program_lines)
}

fn program_with(prelude: Option<&str>, provided: &Provided, source: &str) -> String {
    let mut parts: Vec<&str> = Vec::new();
    parts.extend(prelude.map(str::trim_end).filter(|p| !p.is_empty()));
    if !provided.program.is_empty() {
        parts.push(provided.program.trim_end());
    }
    parts.push(source);
    parts.join("\n\n\n")
}

impl Engine<'_> {
    pub(super) fn solve_node_in(
        &self,
        run: &Run,
        tree: &ProblemTree,
        id: &NodeId,
        solutions: &BTreeMap<NodeId, CandidateSolution>,
        log: &mut Vec<CallRecord>,
    ) -> Result<CandidateSolution, NodeError> {
        let fail = |reason: String| NodeError::Failed {
            reason,
            report: None,
            candidate: None,
        };
        let node = tree.node(id).ok_or_else(|| fail(format!("unknown node {id}")))?;
        let interfaces = composition_context(tree, id, solutions).map_err(|e| fail(e.to_string()))?;
        let order = tree.subtree_postorder(id).map_err(|e| fail(e.to_string()))?;
        let descendants: Vec<(&NodeId, &str)> = order[..order.len() - 1]
            .iter()
            .map(|d| (d, solutions[d].source.as_str()))
            .collect();
        let provided = if descendants.is_empty() {
            Provided {
                program: String::new(),
                names: BTreeSet::new(),
            }
        } else {
            let names = descendants.iter().flat_map(|(_, src)| top_level_names(src)).collect();
            let program = join_sources(descendants).map_err(|e| fail(e.to_string()))?;
            Provided { program, names }
        };
        self.attempts(run, tree, node, &interfaces, &provided, log)
    }

    fn code_prompt(
        &self,
        tree: &ProblemTree,
        node: &ProblemNode,
        interfaces: &[FunctionInterface],
        feedback: &[String],
    ) -> Result<PromptBundle, NodeError> {
        let ctx = PromptContext::new(&tree.task.target_language_tag)
            .node(node)
            .interfaces(interfaces)
            .feedback(feedback);
        let kind = if node.is_leaf() {
            AgentKind::CodeLeaf
        } else {
            AgentKind::CodeCompose
        };
        render_prompt(kind, &ctx).map_err(|e| NodeError::Infra(e.to_string()))
    }

    fn attempts(
        &self,
        run: &Run,
        tree: &ProblemTree,
        node: &ProblemNode,
        interfaces: &[FunctionInterface],
        provided: &Provided,
        log: &mut Vec<CallRecord>,
    ) -> Result<CandidateSolution, NodeError> {
        let budget = self.config.budget;
        let language = tree.task.target_language_tag.as_str();
        let expected = node.hinted_name();
        let mut feedback: Vec<String> = Vec::new();
        let mut last_report: Option<TestReport> = None;
        let mut last_candidate: Option<CandidateSolution> = None;

        'attempt: for attempt in 1..=budget.attempts_per_node {
            let mut approved = None;
            for _round in 0..budget.critic_rounds_per_attempt {
                let bundle = self.code_prompt(tree, node, interfaces, &feedback)?;
                let text = match self.call(run, log, Some(&node.id), bundle) {
                    Ok(text) => text,
                    Err(CallError::Refusal(msg)) => {
                        feedback.push(format!("The model returned an error instead of code: {msg}"));
                        continue 'attempt;
                    }
                    Err(e) => return Err(e.into()),
                };
                let parsed = parse_code_response(&text, expected).and_then(|f| {
                    let iface = f.interface()?;
                    Ok((f.source, iface))
                });
                let (source, iface) = match parsed {
                    Ok(x) => x,
                    Err(e) => {
                        feedback.push(format!("Your previous reply could not be used: {e}."));
                        continue 'attempt;
                    }
                };
                let clashes: Vec<String> = top_level_names(&source)
                    .into_iter()
                    .filter(|n| provided.names.contains(n))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                if !clashes.is_empty() {
                    feedback.push(format!(
                        "Do not redefine functions that are already provided: {}. Call them instead.",
                        clashes.join(", ")
                    ));
                    continue 'attempt;
                }
                let candidate = CandidateSolution::new(node.id.clone(), source, iface, attempt);

                let ctx = PromptContext::new(language).node(node).candidate(&candidate.source);
                let bundle = render_prompt(AgentKind::Critic, &ctx).map_err(|e| NodeError::Infra(e.to_string()))?;
                let review = match self.call(run, log, Some(&node.id), bundle) {
                    Ok(text) => parse_critic_response(&text),
                    Err(CallError::Refusal(msg)) => CritiqueVerdict {
                        verdict: Verdict::Revise,
                        feedback: format!("The reviewer returned an error: {msg}"),
                    },
                    Err(e) => return Err(e.into()),
                };
                match review.verdict {
                    Verdict::Approve => {
                        approved = Some(candidate);
                        break;
                    }
                    Verdict::Revise => {
                        feedback.push(format!("Code review:\n{}", review.feedback));
                        last_candidate = Some(candidate);
                    }
                }
            }
            let Some(mut candidate) = approved else {
                continue;
            };

            let program = program_with(tree.task.prelude.as_deref(), provided, &candidate.source);
            let (report, origin) = match self.run_generated_tests(run, language, node, &candidate, &program, log)? {
                SuiteOutcome::Ran(report) => (report, "Generated tests"),
                SuiteOutcome::Unavailable => (self.execute(&program, "", None)?, "Execution"),
            };
            let (report, origin) = if report.passed() && node.id == tree.root_id {
                match &tree.task.provided_tests {
                    Some(tests) => (
                        self.execute(&program, tests, tree.task.entry_point.as_deref())?,
                        "Provided tests",
                    ),
                    None => (report, origin),
                }
            } else {
                (report, origin)
            };

            if report.passed() {
                candidate.feedback_history = feedback;
                candidate.mark_verified(report).expect("passing report verifies");
                return Ok(candidate);
            }
            feedback.push(format!("{origin}: {}", report.diagnostic(&self.config.limits)));
            candidate.mark_failed(Some(report.clone()));
            last_report = Some(report);
            last_candidate = Some(candidate);
        }

        if let Some(c) = last_candidate.as_mut() {
            c.feedback_history = feedback;
            if c.status != SolutionStatus::Failed {
                c.mark_failed(c.report.clone());
            }
        }
        Err(NodeError::Failed {
            reason: format!("no candidate passed after {} attempts", budget.attempts_per_node),
            report: last_report.map(Box::new),
            candidate: last_candidate.map(Box::new),
        })
    }

    fn execute(&self, program: &str, tests: &str, entry_point: Option<&str>) -> Result<TestReport, NodeError> {
        self.sandbox
            .execute_candidate(program, tests, entry_point, &self.config.limits)
            .map_err(|e| NodeError::Infra(e.to_string()))
    }

    /// Asks the tester for a suite and runs it. A suite that is unusable
    /// (unparseable, redefines the code under test, or errors inside its own
    /// code) is discarded and regenerated once; after a second discard the
    /// node goes on without generated tests.
    fn run_generated_tests(
        &self,
        run: &Run,
        language: &str,
        node: &ProblemNode,
        candidate: &CandidateSolution,
        program: &str,
        log: &mut Vec<CallRecord>,
    ) -> Result<SuiteOutcome, NodeError> {
        let protected: BTreeSet<String> = top_level_names(program).into_iter().collect();
        let mut problems: Vec<String> = Vec::new();
        for round in 0..2 {
            let ctx = PromptContext::new(language)
                .node(node)
                .interface(&candidate.interface)
                .feedback(&problems);
            let bundle = render_prompt(AgentKind::Tester, &ctx).map_err(|e| NodeError::Infra(e.to_string()))?;
            let problem = match self.call(run, log, Some(&node.id), bundle) {
                Ok(text) => match parse_tests_response(&text) {
                    Ok(suite) => match self.judge_suite(&suite, &protected, program)? {
                        Ok(report) => return Ok(SuiteOutcome::Ran(report)),
                        Err(problem) => problem,
                    },
                    Err(e) => e.to_string(),
                },
                Err(CallError::Refusal(msg)) => format!("the model returned an error: {msg}"),
                Err(e) => return Err(e.into()),
            };
            let note = if round == 0 {
                format!("suite discarded: {problem}")
            } else {
                format!("suite discarded: {problem}; continuing without generated tests")
            };
            if let Some(last) = log.last_mut() {
                last.note = Some(note);
            }
            problems.push(problem);
        }
        Ok(SuiteOutcome::Unavailable)
    }

    /// `Ok(Ok(report))` when the suite decided the candidate, `Ok(Err(why))`
    /// when the suite itself is at fault.
    fn judge_suite(
        &self,
        suite: &GeneratedTests,
        protected: &BTreeSet<String>,
        program: &str,
    ) -> Result<Result<TestReport, String>, NodeError> {
        let redefined: Vec<String> = top_level_names(&suite.test_source)
            .into_iter()
            .filter(|n| protected.contains(n))
            .collect();
        if !redefined.is_empty() {
            return Ok(Err(format!(
                "the tests redefine `{}` instead of testing it",
                redefined.join("`, `")
            )));
        }
        let report = self.execute(program, &suite.test_source, None)?;
        if report.status == TestStatus::Error && error_in_tests(&report, program) {
            return Ok(Err(format!(
                "the test code itself raised an error:\n{}",
                report.diagnostic(&self.config.limits)
            )));
        }
        Ok(Ok(report))
    }
}
