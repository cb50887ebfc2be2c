//! Concatenating verified node sources into one program.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agents::python::top_level_names;
use crate::solution::{CandidateSolution, SolutionStatus};
use crate::tree::{leaves_postorder, NodeId, ProblemTree, TreeError};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("node {0} has no verified solution")]
    NotVerified(NodeId),
    #[error("`{name}` is defined by more than one node: {}", join_ids(.node_ids))]
    DuplicateDefinition { name: String, node_ids: Vec<NodeId> },
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter().map(NodeId::as_str).collect::<Vec<_>>().join(", ")
}

/// Joins `sources` (already in dependency order) into one program, failing
/// when two of them define the same top-level name.
pub fn join_sources<'a>(sources: impl IntoIterator<Item = (&'a NodeId, &'a str)>) -> Result<String, AssemblyError> {
    let mut owners: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
    let mut parts = Vec::new();
    for (id, source) in sources {
        let mut names = top_level_names(source);
        names.sort();
        names.dedup();
        for name in names {
            owners.entry(name).or_default().push(id.clone());
        }
        parts.push(source.trim_end());
    }
    if let Some((name, node_ids)) = owners.into_iter().find(|(_, ids)| ids.len() > 1) {
        return Err(AssemblyError::DuplicateDefinition { name, node_ids });
    }
    let mut program = parts.join("\n\n\n");
    program.push('\n');
    Ok(program)
}

/// The final program: every node's verified source in post-order, so each
/// function is defined after the helpers it calls.
pub fn assemble_program(
    tree: &ProblemTree,
    solutions: &BTreeMap<NodeId, CandidateSolution>,
) -> Result<String, AssemblyError> {
    let order = leaves_postorder(tree)?;
    let mut sources = Vec::with_capacity(order.len());
    for id in &order {
        match solutions.get(id) {
            Some(sol) if sol.status == SolutionStatus::Verified => sources.push((id, sol.source.as_str())),
            _ => return Err(AssemblyError::NotVerified(id.clone())),
        }
    }
    join_sources(sources)
}
