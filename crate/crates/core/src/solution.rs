use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::{TestReport, TestStatus};
use crate::tree::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InterfaceError {
    #[error("function name {0:?} is not a valid identifier")]
    InvalidName(String),
    #[error("function {0} has no documentation")]
    MissingDoc(String),
    #[error("function name {name} does not appear in the source of node {node}")]
    NameNotInSource { name: String, node: NodeId },
    #[error("cannot mark node {0} verified without a passing test report")]
    NotPassing(NodeId),
}

/// Name, signature and documentation of a generated function: everything a
/// parent node is allowed to know about a child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInterface {
    pub name: String,
    /// Parameter list and return annotation as written, e.g. `(xs: list) -> int`.
    pub signature: String,
    pub doc: String,
}

impl FunctionInterface {
    pub fn new(
        name: impl Into<String>,
        signature: impl Into<String>,
        doc: impl Into<String>,
    ) -> Result<Self, InterfaceError> {
        let name = name.into();
        let doc = doc.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(InterfaceError::InvalidName(name));
        }
        if doc.trim().is_empty() {
            return Err(InterfaceError::MissingDoc(name));
        }
        Ok(Self {
            name,
            signature: signature.into(),
            doc,
        })
    }

    /// `name(signature)` as it would be called.
    pub fn header(&self) -> String {
        format!("{}{}", self.name, self.signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionStatus {
    Unverified,
    Verified,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub node_id: NodeId,
    pub source: String,
    pub interface: FunctionInterface,
    pub attempt_index: u32,
    pub status: SolutionStatus,
    pub feedback_history: Vec<String>,
    /// The report that decided `status`, if the candidate was executed.
    pub report: Option<TestReport>,
}

impl CandidateSolution {
    pub fn new(node_id: NodeId, source: String, interface: FunctionInterface, attempt_index: u32) -> Self {
        Self {
            node_id,
            source,
            interface,
            attempt_index,
            status: SolutionStatus::Unverified,
            feedback_history: Vec::new(),
            report: None,
        }
    }

    /// Checks that the declared interface name occurs in the source.
    pub fn check(&self) -> Result<(), InterfaceError> {
        if !self.source.contains(&self.interface.name) {
            return Err(InterfaceError::NameNotInSource {
                name: self.interface.name.clone(),
                node: self.node_id.clone(),
            });
        }
        Ok(())
    }

    pub fn mark_verified(&mut self, report: TestReport) -> Result<(), InterfaceError> {
        if report.status != TestStatus::Pass {
            return Err(InterfaceError::NotPassing(self.node_id.clone()));
        }
        self.status = SolutionStatus::Verified;
        self.report = Some(report);
        Ok(())
    }

    pub fn mark_failed(&mut self, report: Option<TestReport>) {
        self.status = SolutionStatus::Failed;
        self.report = report;
    }
}
