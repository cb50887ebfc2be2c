//! Prompt construction and response parsing for the agent roles.
//!
//! All natural-language to structure conversion lives here. Rendering is a
//! pure function of its inputs; parsers are total over arbitrary text and
//! return either a value or an [`AgentError`].

mod parse;
pub mod python;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solution::FunctionInterface;
use crate::tree::{ProblemNode, TaskSpec, TreeCaps, Violation};

pub use parse::{
    fenced_blocks, parse_code_response, parse_critic_response, parse_tests_response, parse_tree_response,
    render_tree_block, CodeFragment, FencedBlock,
};

/// Version of the template set in `templates/`. Embedded in every system
/// prompt, hence in every request fingerprint.
pub const TEMPLATE_VERSION: &str = "treegen-prompts/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    GeneralistDecompose,
    CodeLeaf,
    CodeCompose,
    Critic,
    Tester,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::GeneralistDecompose,
        AgentKind::CodeLeaf,
        AgentKind::CodeCompose,
        AgentKind::Critic,
        AgentKind::Tester,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::GeneralistDecompose => "generalist_decompose",
            AgentKind::CodeLeaf => "code_leaf",
            AgentKind::CodeCompose => "code_compose",
            AgentKind::Critic => "critic",
            AgentKind::Tester => "tester",
        }
    }

    /// The role label carried in `ChatRequest::request_tag`.
    pub fn request_tag(self) -> &'static str {
        match self {
            AgentKind::GeneralistDecompose => "generalist",
            AgentKind::CodeLeaf | AgentKind::CodeCompose => "code",
            AgentKind::Critic => "critic",
            AgentKind::Tester => "tester",
        }
    }

    fn templates(self) -> (&'static str, &'static str) {
        match self {
            AgentKind::GeneralistDecompose => (
                include_str!("../../templates/decompose.system.txt"),
                include_str!("../../templates/decompose.user.txt"),
            ),
            AgentKind::CodeLeaf => (
                include_str!("../../templates/code_leaf.system.txt"),
                include_str!("../../templates/code_leaf.user.txt"),
            ),
            AgentKind::CodeCompose => (
                include_str!("../../templates/code_compose.system.txt"),
                include_str!("../../templates/code_compose.user.txt"),
            ),
            AgentKind::Critic => (
                include_str!("../../templates/critic.system.txt"),
                include_str!("../../templates/critic.user.txt"),
            ),
            AgentKind::Tester => (
                include_str!("../../templates/tester.system.txt"),
                include_str!("../../templates/tester.user.txt"),
            ),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("{kind} prompt needs context field `{field}`")]
    MissingContext { kind: AgentKind, field: &'static str },
    #[error("no well-formed tree block in the reply: {0}")]
    UnparseableTree(String),
    #[error("decomposition is not a valid tree: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidTree(Vec<Violation>),
    #[error("the reply contains no fenced code block")]
    NoCodeBlock,
    #[error("the code block defines no function")]
    NoFunctionDefinition,
    #[error("expected a function named `{expected}` but the code defines `{found}`")]
    NameMismatch { expected: String, found: String },
    #[error("function `{0}` has no docstring")]
    MissingDocstring(String),
    #[error("the test block contains no assert statements")]
    EmptySuite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub agent_kind: AgentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueVerdict {
    pub verdict: Verdict,
    /// Non-empty when the verdict is `Revise`.
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTests {
    pub test_source: String,
    pub case_count: usize,
}

/// Sampling temperature per agent role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub generalist_decompose: f64,
    pub code_leaf: f64,
    pub code_compose: f64,
    pub critic: f64,
    pub tester: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            generalist_decompose: 0.7,
            code_leaf: 0.2,
            code_compose: 0.2,
            critic: 0.2,
            tester: 0.2,
        }
    }
}

impl Temperatures {
    pub fn for_kind(&self, kind: AgentKind) -> f64 {
        match kind {
            AgentKind::GeneralistDecompose => self.generalist_decompose,
            AgentKind::CodeLeaf => self.code_leaf,
            AgentKind::CodeCompose => self.code_compose,
            AgentKind::Critic => self.critic,
            AgentKind::Tester => self.tester,
        }
    }

    pub fn set(&mut self, kind: AgentKind, value: f64) {
        match kind {
            AgentKind::GeneralistDecompose => self.generalist_decompose = value,
            AgentKind::CodeLeaf => self.code_leaf = value,
            AgentKind::CodeCompose => self.code_compose = value,
            AgentKind::Critic => self.critic = value,
            AgentKind::Tester => self.tester = value,
        }
    }
}

/// Inputs to [`render_prompt`]. Which fields are required depends on the
/// agent kind:
///
/// | kind                   | required                       |
/// |------------------------|--------------------------------|
/// | `generalist_decompose` | `task`                         |
/// | `code_leaf`            | `node`                         |
/// | `code_compose`         | `node`, `interfaces`           |
/// | `critic`               | `node`, `candidate`            |
/// | `tester`               | `node`, `interface`            |
///
/// `feedback` is optional everywhere and rendered as numbered attempts.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub language: &'a str,
    pub caps: TreeCaps,
    pub task: Option<&'a TaskSpec>,
    pub node: Option<&'a ProblemNode>,
    pub interfaces: Option<&'a [FunctionInterface]>,
    pub candidate: Option<&'a str>,
    pub interface: Option<&'a FunctionInterface>,
    pub feedback: &'a [String],
}

impl<'a> PromptContext<'a> {
    pub fn new(language: &'a str) -> Self {
        Self {
            language,
            caps: TreeCaps::default(),
            task: None,
            node: None,
            interfaces: None,
            candidate: None,
            interface: None,
            feedback: &[],
        }
    }

    pub fn task(mut self, task: &'a TaskSpec) -> Self {
        self.task = Some(task);
        self
    }

    pub fn caps(mut self, caps: TreeCaps) -> Self {
        self.caps = caps;
        self
    }

    pub fn node(mut self, node: &'a ProblemNode) -> Self {
        self.node = Some(node);
        self
    }

    pub fn interfaces(mut self, interfaces: &'a [FunctionInterface]) -> Self {
        self.interfaces = Some(interfaces);
        self
    }

    pub fn candidate(mut self, source: &'a str) -> Self {
        self.candidate = Some(source);
        self
    }

    pub fn interface(mut self, interface: &'a FunctionInterface) -> Self {
        self.interface = Some(interface);
        self
    }

    pub fn feedback(mut self, feedback: &'a [String]) -> Self {
        self.feedback = feedback;
        self
    }
}

/// Single-pass `{{name}}` substitution. Substituted text is not re-scanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => panic!("template placeholder {{{{{key}}}}} has no value"),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn feedback_section(kind: AgentKind, feedback: &[String]) -> String {
    if feedback.is_empty() {
        return String::new();
    }
    let heading = match kind {
        AgentKind::GeneralistDecompose => "Your previous answers could not be used:",
        AgentKind::Tester => "Earlier test suites were discarded because they could not run:",
        _ => "Feedback on previous attempts (fix every issue):",
    };
    let mut s = format!("\n{heading}\n");
    for (i, f) in feedback.iter().enumerate() {
        s.push_str(&format!("\nAttempt {} feedback:\n{}\n", i + 1, f.trim_end()));
    }
    s.push('\n');
    s
}

fn render_interfaces(interfaces: &[FunctionInterface]) -> String {
    if interfaces.is_empty() {
        return "(none)".to_string();
    }
    let mut s = String::new();
    for iface in interfaces {
        s.push_str(&format!("- {}\n", iface.header()));
        for line in iface.doc.lines() {
            s.push_str("    ");
            s.push_str(line);
            s.push('\n');
        }
    }
    s.trim_end().to_string()
}

fn interface_hint(node: &ProblemNode) -> &str {
    node.interface_hint
        .as_deref()
        .filter(|h| !h.trim().is_empty())
        .unwrap_or("(choose a descriptive function name)")
}

/// Builds the system and user prompt for one agent call.
pub fn render_prompt(kind: AgentKind, ctx: &PromptContext<'_>) -> Result<PromptBundle, AgentError> {
    let missing = |field| AgentError::MissingContext { kind, field };
    let (system_tpl, user_tpl) = kind.templates();
    let depth = ctx.caps.depth_cap.to_string();
    let branch = ctx.caps.branch_cap.to_string();
    let feedback = feedback_section(kind, ctx.feedback);
    let base = [
        ("version", TEMPLATE_VERSION),
        ("language", ctx.language),
        ("depth_cap", depth.as_str()),
        ("branch_cap", branch.as_str()),
    ];
    let system = fill(system_tpl, &base);

    let user = match kind {
        AgentKind::GeneralistDecompose => {
            let task = ctx.task.ok_or_else(|| missing("task"))?;
            let entry = task
                .entry_point
                .as_ref()
                .map(|ep| format!("The root function must be named `{ep}`.\n\n"))
                .unwrap_or_default();
            let fb = if feedback.is_empty() {
                String::new()
            } else {
                format!("{}\n", feedback.trim_start())
            };
            fill(
                user_tpl,
                &[
                    ("language", ctx.language),
                    ("task_description", task.description.trim_end()),
                    ("entry_point_section", &entry),
                    ("feedback_section", &fb),
                ],
            )
        }
        AgentKind::CodeLeaf => {
            let node = ctx.node.ok_or_else(|| missing("node"))?;
            fill(
                user_tpl,
                &[
                    ("title", &node.title),
                    ("interface_hint", interface_hint(node)),
                    ("description", node.description.trim_end()),
                    ("feedback_section", &feedback),
                ],
            )
        }
        AgentKind::CodeCompose => {
            let node = ctx.node.ok_or_else(|| missing("node"))?;
            let interfaces = ctx.interfaces.ok_or_else(|| missing("interfaces"))?;
            fill(
                user_tpl,
                &[
                    ("title", &node.title),
                    ("interface_hint", interface_hint(node)),
                    ("description", node.description.trim_end()),
                    ("interfaces", &render_interfaces(interfaces)),
                    ("feedback_section", &feedback),
                ],
            )
        }
        AgentKind::Critic => {
            let node = ctx.node.ok_or_else(|| missing("node"))?;
            let candidate = ctx.candidate.ok_or_else(|| missing("candidate"))?;
            fill(
                user_tpl,
                &[
                    ("title", &node.title),
                    ("interface_hint", interface_hint(node)),
                    ("description", node.description.trim_end()),
                    ("language", ctx.language),
                    ("candidate", candidate.trim_end()),
                ],
            )
        }
        AgentKind::Tester => {
            let node = ctx.node.ok_or_else(|| missing("node"))?;
            let iface = ctx.interface.ok_or_else(|| missing("interface"))?;
            fill(
                user_tpl,
                &[
                    ("title", &node.title),
                    ("description", node.description.trim_end()),
                    ("interface", &render_interfaces(std::slice::from_ref(iface))),
                    ("feedback_section", &feedback),
                ],
            )
        }
    };
    Ok(PromptBundle {
        system,
        user,
        agent_kind: kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{NodeId, NodeKind};

    fn node() -> ProblemNode {
        ProblemNode {
            id: NodeId::new("root.1"),
            title: "sum evens".into(),
            description: "Return the sum of the even numbers in xs.".into(),
            interface_hint: Some("sum_evens(xs: list) -> int".into()),
            children: vec![],
            kind: NodeKind::Leaf,
        }
    }

    #[test]
    fn every_template_renders_without_leftover_placeholders() {
        let task = TaskSpec::new("t", "Do {{not}} expand this.").with_entry_point("solve");
        let n = node();
        let iface = FunctionInterface::new("f", "(x)", "adds").unwrap();
        let ifaces = [iface.clone()];
        let fb = vec!["first".to_string()];
        let ctx = PromptContext::new("python")
            .task(&task)
            .node(&n)
            .interfaces(&ifaces)
            .candidate("def f(x):\n    return x\n")
            .interface(&iface)
            .feedback(&fb);
        for kind in AgentKind::ALL {
            let b = render_prompt(kind, &ctx).unwrap();
            assert!(b.system.contains(TEMPLATE_VERSION), "{kind}");
            assert!(b.system.contains(kind.as_str()));
            assert!(!b.system.contains("{{") && !b.user.trim().is_empty());
        }
        // Values are inserted verbatim, never re-expanded.
        let b = render_prompt(AgentKind::GeneralistDecompose, &ctx).unwrap();
        assert!(b.user.contains("Do {{not}} expand this."));
        assert!(b.user.contains("`solve`"));
    }

    #[test]
    fn decompose_prompt_asks_for_step_by_step_reasoning() {
        let task = TaskSpec::new("t", "Write a calculator.");
        let b = render_prompt(
            AgentKind::GeneralistDecompose,
            &PromptContext::new("python").task(&task),
        )
        .unwrap();
        assert!(b.system.contains("step by step"));
        assert!(b.system.contains("candidate solution"));
        assert!(b.system.contains("```json"));
        assert!(b.system.contains("at most 3 levels") && b.system.contains("at most 7 children"));
    }

    #[test]
    fn missing_context_is_reported() {
        let ctx = PromptContext::new("python");
        assert_eq!(
            render_prompt(AgentKind::CodeLeaf, &ctx),
            Err(AgentError::MissingContext {
                kind: AgentKind::CodeLeaf,
                field: "node"
            })
        );
        let n = node();
        let ctx = ctx.node(&n);
        assert_eq!(
            render_prompt(AgentKind::CodeCompose, &ctx).unwrap_err(),
            AgentError::MissingContext {
                kind: AgentKind::CodeCompose,
                field: "interfaces"
            }
        );
        assert!(matches!(
            render_prompt(AgentKind::Critic, &ctx),
            Err(AgentError::MissingContext { field: "candidate", .. })
        ));
        assert!(matches!(
            render_prompt(AgentKind::Tester, &ctx),
            Err(AgentError::MissingContext { field: "interface", .. })
        ));
        assert!(matches!(
            render_prompt(AgentKind::GeneralistDecompose, &ctx),
            Err(AgentError::MissingContext { field: "task", .. })
        ));
    }

    #[test]
    fn compose_prompt_lists_interfaces_only() {
        let mut n = node();
        n.children = vec![NodeId::new("a"), NodeId::new("b")];
        let ifaces = [
            FunctionInterface::new("f", "(a, b)", "adds").unwrap(),
            FunctionInterface::new("g", "(xs)", "sorts").unwrap(),
        ];
        let ctx = PromptContext::new("python").node(&n).interfaces(&ifaces);
        let b = render_prompt(AgentKind::CodeCompose, &ctx).unwrap();
        assert!(b.user.contains("- f(a, b)\n    adds"));
        assert!(b.user.contains("- g(xs)\n    sorts"));
        assert!(!b.user.contains("return"));
        // Pure.
        assert_eq!(b, render_prompt(AgentKind::CodeCompose, &ctx).unwrap());
    }

    #[test]
    fn feedback_is_numbered_in_order() {
        let n = node();
        let fb = vec!["off by one in loop".to_string(), "empty list crashes".to_string()];
        let b = render_prompt(
            AgentKind::CodeLeaf,
            &PromptContext::new("python").node(&n).feedback(&fb),
        )
        .unwrap();
        let first = b.user.find("Attempt 1 feedback:\noff by one in loop").unwrap();
        let second = b.user.find("Attempt 2 feedback:\nempty list crashes").unwrap();
        assert!(first < second);
    }

    #[test]
    fn temperature_defaults() {
        let t = Temperatures::default();
        assert_eq!(t.for_kind(AgentKind::GeneralistDecompose), 0.7);
        assert_eq!(t.for_kind(AgentKind::CodeLeaf), 0.2);
        assert_eq!(t.for_kind(AgentKind::CodeCompose), 0.2);
    }
}
