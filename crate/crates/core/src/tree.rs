//! Problem tree model.
//!
//! A task is decomposed into a rooted tree of sub-problems. Code is generated
//! leaves-first, and a parent only ever sees the [`FunctionInterface`] of its
//! direct children. This module owns the structural rules every other part of
//! the engine relies on: [`validate_tree`], [`leaves_postorder`] and
//! [`composition_context`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solution::{CandidateSolution, FunctionInterface, SolutionStatus};

pub const DEFAULT_DEPTH_CAP: usize = 3;
pub const DEFAULT_BRANCH_CAP: usize = 7;

/// Identifier of a node, unique within one tree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("task description must not be empty")]
    EmptyDescription,
    #[error("task {0} provides tests but no entry point")]
    TestsWithoutEntryPoint(String),
    #[error("invalid tree: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} is missing a verified solution for child {child}")]
    MissingChildSolution { node: NodeId, child: NodeId },
    #[error("caps must be positive (depth_cap={depth_cap}, branch_cap={branch_cap})")]
    InvalidCaps { depth_cap: usize, branch_cap: usize },
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// The coding task handed to the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    #[serde(default)]
    pub entry_point: Option<String>,
    #[serde(default)]
    pub provided_tests: Option<String>,
    /// Code (imports, given helpers) placed before every program the engine
    /// runs and before the final program.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prelude: Option<String>,
    /// Language of the code to generate, e.g. `python`.
    #[serde(default = "default_language", alias = "target_language")]
    pub target_language_tag: String,
}

fn default_language() -> String {
    "python".to_string()
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            description: description.into(),
            entry_point: None,
            provided_tests: None,
            prelude: None,
            target_language_tag: default_language(),
        }
    }

    pub fn with_entry_point(mut self, name: impl Into<String>) -> Self {
        self.entry_point = Some(name.into());
        self
    }

    pub fn with_tests(mut self, tests: impl Into<String>) -> Self {
        self.provided_tests = Some(tests.into());
        self
    }

    pub fn with_prelude(mut self, prelude: impl Into<String>) -> Self {
        let prelude = prelude.into();
        self.prelude = (!prelude.trim().is_empty()).then_some(prelude);
        self
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.description.trim().is_empty() {
            return Err(TreeError::EmptyDescription);
        }
        if self.provided_tests.is_some() && self.entry_point.is_none() {
            return Err(TreeError::TestsWithoutEntryPoint(self.task_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    Internal,
    Leaf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemNode {
    pub id: NodeId,
    pub title: String,
    pub description: String,
    pub interface_hint: Option<String>,
    pub children: Vec<NodeId>,
    pub kind: NodeKind,
}

impl ProblemNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The function name requested by `interface_hint`, if it starts with one.
    pub fn hinted_name(&self) -> Option<&str> {
        let hint = self.interface_hint.as_deref()?.trim();
        let hint = hint.strip_prefix("def ").unwrap_or(hint).trim_start();
        let end = hint
            .find(|c: char| !(c.is_alphanumeric() || c == '_'))
            .unwrap_or(hint.len());
        let name = &hint[..end];
        (!name.is_empty() && !name.starts_with(|c: char| c.is_ascii_digit())).then_some(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeCaps {
    pub depth_cap: usize,
    pub branch_cap: usize,
}

impl Default for TreeCaps {
    fn default() -> Self {
        Self {
            depth_cap: DEFAULT_DEPTH_CAP,
            branch_cap: DEFAULT_BRANCH_CAP,
        }
    }
}

impl TreeCaps {
    pub fn new(depth_cap: usize, branch_cap: usize) -> Result<Self, TreeError> {
        if depth_cap == 0 || branch_cap == 0 {
            return Err(TreeError::InvalidCaps { depth_cap, branch_cap });
        }
        Ok(Self { depth_cap, branch_cap })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemTree {
    pub task: TaskSpec,
    pub nodes: BTreeMap<NodeId, ProblemNode>,
    pub root_id: NodeId,
    pub caps: TreeCaps,
}

impl ProblemTree {
    /// A tree made of the root alone: the task was judged atomic.
    pub fn single_node(task: TaskSpec, caps: TreeCaps) -> Self {
        let root_id = NodeId::new("root");
        let root = ProblemNode {
            id: root_id.clone(),
            title: task.entry_point.clone().unwrap_or_else(|| task.task_id.clone()),
            description: task.description.clone(),
            interface_hint: task.entry_point.clone(),
            children: Vec::new(),
            kind: NodeKind::Root,
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(root_id.clone(), root);
        Self {
            task,
            nodes,
            root_id,
            caps,
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&ProblemNode> {
        self.nodes.get(id)
    }

    pub fn root(&self) -> Option<&ProblemNode> {
        self.nodes.get(&self.root_id)
    }

    /// Parent of every node referenced as a child (first parent wins).
    pub fn parents(&self) -> HashMap<&NodeId, &NodeId> {
        let mut out = HashMap::new();
        for node in self.nodes.values() {
            for child in &node.children {
                out.entry(child).or_insert(&node.id);
            }
        }
        out
    }

    /// Strict ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: &NodeId) -> Vec<NodeId> {
        let parents = self.parents();
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut cur = id;
        while let Some(p) = parents.get(cur) {
            if !seen.insert((*p).clone()) {
                break;
            }
            out.push((*p).clone());
            cur = p;
        }
        out
    }

    /// Post-order of the subtree rooted at `id` (the node itself last).
    pub fn subtree_postorder(&self, id: &NodeId) -> Result<Vec<NodeId>, TreeError> {
        let violations = validate_tree(self);
        if !violations.is_empty() {
            return Err(TreeError::Invalid(violations));
        }
        if !self.nodes.contains_key(id) {
            return Err(TreeError::UnknownNode(id.clone()));
        }
        Ok(postorder_from(self, id))
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument::from_tree(self)
    }
}

/// A structural rule a tree can break.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    BranchExceeded,
    Cycle,
    DepthExceeded,
    DuplicateChild,
    KeyMismatch,
    KindMismatch,
    MissingChild,
    MultipleParents,
    RootHasParent,
    RootKind,
    RootMissing,
    Unreachable,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::BranchExceeded => "branch-exceeded",
            Rule::Cycle => "cycle",
            Rule::DepthExceeded => "depth-exceeded",
            Rule::DuplicateChild => "duplicate-child",
            Rule::KeyMismatch => "key-mismatch",
            Rule::KindMismatch => "kind-mismatch",
            Rule::MissingChild => "missing-child",
            Rule::MultipleParents => "multiple-parents",
            Rule::RootHasParent => "root-has-parent",
            Rule::RootKind => "root-kind",
            Rule::RootMissing => "root-missing",
            Rule::Unreachable => "unreachable",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node_id: NodeId,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.rule, self.node_id)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of `tree` and returns all violations,
/// sorted by node id and then rule name. An empty result means the tree is
/// valid.
pub fn validate_tree(tree: &ProblemTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |node: &NodeId, rule: Rule, detail: String| {
        out.push(Violation {
            node_id: node.clone(),
            rule,
            detail,
        })
    };

    let root_present = tree.nodes.contains_key(&tree.root_id);
    if !root_present {
        push(&tree.root_id, Rule::RootMissing, String::new());
    }

    // Per-node checks.
    let mut referenced_by: BTreeMap<&NodeId, BTreeSet<&NodeId>> = BTreeMap::new();
    for (key, node) in &tree.nodes {
        if key != &node.id {
            push(key, Rule::KeyMismatch, format!("node declares id {}", node.id));
        }
        let mut seen = BTreeSet::new();
        let mut dups = BTreeSet::new();
        for child in &node.children {
            if !seen.insert(child) {
                dups.insert(child.as_str());
            }
            if !tree.nodes.contains_key(child) {
                push(key, Rule::MissingChild, format!("child {child} does not exist"));
            } else {
                referenced_by.entry(child).or_default().insert(key);
            }
        }
        if !dups.is_empty() {
            push(
                key,
                Rule::DuplicateChild,
                dups.into_iter().collect::<Vec<_>>().join(","),
            );
        }
        if node.children.len() > tree.caps.branch_cap {
            push(
                key,
                Rule::BranchExceeded,
                format!("{} children > cap {}", node.children.len(), tree.caps.branch_cap),
            );
        }
        if key == &tree.root_id {
            if node.kind != NodeKind::Root {
                push(key, Rule::RootKind, format!("root declared as {:?}", node.kind));
            }
        } else if node.kind == NodeKind::Root {
            push(key, Rule::RootKind, "non-root node declared as root".into());
        } else if (node.kind == NodeKind::Leaf) != node.children.is_empty() {
            push(
                key,
                Rule::KindMismatch,
                format!("{:?} with {} children", node.kind, node.children.len()),
            );
        }
    }

    for (child, parents) in &referenced_by {
        if *child == &tree.root_id {
            let names: Vec<&str> = parents.iter().map(|p| p.as_str()).collect();
            push(child, Rule::RootHasParent, names.join(","));
        } else if parents.len() > 1 {
            let names: Vec<&str> = parents.iter().map(|p| p.as_str()).collect();
            push(child, Rule::MultipleParents, names.join(","));
        }
    }

    for component in cyclic_components(tree) {
        let names = component.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(",");
        for node in &component {
            push(node, Rule::Cycle, names.clone());
        }
    }

    // Reachability and depth, by breadth-first search from the root.
    let mut depth: HashMap<&NodeId, usize> = HashMap::new();
    if root_present {
        let mut frontier = vec![&tree.root_id];
        depth.insert(&tree.root_id, 0);
        let mut level = 0;
        while !frontier.is_empty() {
            level += 1;
            let mut next = Vec::new();
            for id in frontier {
                for child in &tree.nodes[id].children {
                    if tree.nodes.contains_key(child) && !depth.contains_key(child) {
                        depth.insert(child, level);
                        next.push(child);
                    }
                }
            }
            frontier = next;
        }
    }
    for key in tree.nodes.keys() {
        match depth.get(key) {
            None => push(key, Rule::Unreachable, String::new()),
            Some(&d) if d > tree.caps.depth_cap => push(
                key,
                Rule::DepthExceeded,
                format!("depth {d} > cap {}", tree.caps.depth_cap),
            ),
            Some(_) => {}
        }
    }

    out.sort_by(|a, b| {
        (a.node_id.as_str(), a.rule.name(), &a.detail).cmp(&(b.node_id.as_str(), b.rule.name(), &b.detail))
    });
    out.dedup();
    out
}

/// Strongly connected components that contain a cycle (size > 1, or a
/// self-loop), each sorted, via Tarjan's algorithm.
fn cyclic_components(tree: &ProblemTree) -> Vec<Vec<NodeId>> {
    struct State<'a> {
        tree: &'a ProblemTree,
        index: HashMap<&'a NodeId, usize>,
        low: HashMap<&'a NodeId, usize>,
        on_stack: BTreeSet<&'a NodeId>,
        stack: Vec<&'a NodeId>,
        next: usize,
        out: Vec<Vec<NodeId>>,
    }

    fn visit<'a>(s: &mut State<'a>, v: &'a NodeId) {
        s.index.insert(v, s.next);
        s.low.insert(v, s.next);
        s.next += 1;
        s.stack.push(v);
        s.on_stack.insert(v);
        for w in &s.tree.nodes[v].children {
            if !s.tree.nodes.contains_key(w) {
                continue;
            }
            if !s.index.contains_key(w) {
                visit(s, w);
                let lw = s.low[w];
                let lv = s.low.get_mut(v).unwrap();
                *lv = (*lv).min(lw);
            } else if s.on_stack.contains(w) {
                let iw = s.index[w];
                let lv = s.low.get_mut(v).unwrap();
                *lv = (*lv).min(iw);
            }
        }
        if s.low[v] == s.index[v] {
            let mut comp = Vec::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack.remove(w);
                comp.push(w.clone());
                if w == v {
                    break;
                }
            }
            let self_loop = s.tree.nodes[v].children.contains(v);
            if comp.len() > 1 || self_loop {
                comp.sort();
                s.out.push(comp);
            }
        }
    }

    let mut s = State {
        tree,
        index: HashMap::new(),
        low: HashMap::new(),
        on_stack: BTreeSet::new(),
        stack: Vec::new(),
        next: 0,
        out: Vec::new(),
    };
    for id in tree.nodes.keys() {
        if !s.index.contains_key(id) {
            visit(&mut s, id);
        }
    }
    s.out.sort();
    s.out
}

/// All nodes in post-order: children before parents, siblings in declared
/// order, the root last.
pub fn leaves_postorder(tree: &ProblemTree) -> Result<Vec<NodeId>, TreeError> {
    let violations = validate_tree(tree);
    if !violations.is_empty() {
        return Err(TreeError::Invalid(violations));
    }
    Ok(postorder_from(tree, &tree.root_id))
}

fn postorder_from(tree: &ProblemTree, start: &NodeId) -> Vec<NodeId> {
    // (node, next child index)
    let mut stack: Vec<(&NodeId, usize)> = vec![(start, 0)];
    let mut out = Vec::new();
    while let Some((id, i)) = stack.pop() {
        let children = &tree.nodes[id].children;
        if i < children.len() {
            stack.push((id, i + 1));
            stack.push((&children[i], 0));
        } else {
            out.push(id.clone());
        }
    }
    out
}

/// Interfaces of the direct children of `node_id`, in child order.
///
/// This is the only information a parent receives about its sub-problems:
/// no source text, no grandchildren, no descriptions.
pub fn composition_context(
    tree: &ProblemTree,
    node_id: &NodeId,
    solutions: &BTreeMap<NodeId, CandidateSolution>,
) -> Result<Vec<FunctionInterface>, TreeError> {
    let node = tree
        .node(node_id)
        .ok_or_else(|| TreeError::UnknownNode(node_id.clone()))?;
    node.children
        .iter()
        .map(|child| match solutions.get(child) {
            Some(sol) if sol.status == SolutionStatus::Verified => Ok(sol.interface.clone()),
            _ => Err(TreeError::MissingChildSolution {
                node: node_id.clone(),
                child: child.clone(),
            }),
        })
        .collect()
}

/// On-disk form of a tree (`tree.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub task_id: String,
    pub root: NodeId,
    pub nodes: Vec<DocumentNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentNode {
    pub id: NodeId,
    pub title: String,
    pub description: String,
    pub interface_hint: Option<String>,
    pub children: Vec<NodeId>,
}

impl TreeDocument {
    pub fn from_tree(tree: &ProblemTree) -> Self {
        let order = postorder_from_lenient(tree);
        Self {
            task_id: tree.task.task_id.clone(),
            root: tree.root_id.clone(),
            nodes: order
                .into_iter()
                .filter_map(|id| tree.nodes.get(&id))
                .map(|n| DocumentNode {
                    id: n.id.clone(),
                    title: n.title.clone(),
                    description: n.description.clone(),
                    interface_hint: n.interface_hint.clone(),
                    children: n.children.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds a tree, deriving node kinds from structure. The result is
    /// validated.
    pub fn into_tree(self, task: TaskSpec, caps: TreeCaps) -> Result<ProblemTree, TreeError> {
        let mut nodes = BTreeMap::new();
        for n in self.nodes {
            let kind = if n.id == self.root {
                NodeKind::Root
            } else if n.children.is_empty() {
                NodeKind::Leaf
            } else {
                NodeKind::Internal
            };
            nodes.insert(
                n.id.clone(),
                ProblemNode {
                    id: n.id,
                    title: n.title,
                    description: n.description,
                    interface_hint: n.interface_hint,
                    children: n.children,
                    kind,
                },
            );
        }
        let tree = ProblemTree {
            task,
            nodes,
            root_id: self.root,
            caps,
        };
        let violations = validate_tree(&tree);
        if violations.is_empty() {
            Ok(tree)
        } else {
            Err(TreeError::Invalid(violations))
        }
    }
}

/// Pre-order listing that tolerates invalid trees (used for serialization).
fn postorder_from_lenient(tree: &ProblemTree) -> Vec<NodeId> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack = vec![tree.root_id.clone()];
    while let Some(id) = stack.pop() {
        if !seen.insert(id.clone()) {
            continue;
        }
        if let Some(node) = tree.nodes.get(&id) {
            out.push(id.clone());
            for c in node.children.iter().rev() {
                stack.push(c.clone());
            }
        }
    }
    for id in tree.nodes.keys() {
        if !seen.contains(id) {
            out.push(id.clone());
        }
    }
    out
}
