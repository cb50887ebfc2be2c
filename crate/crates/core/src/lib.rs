//! Hierarchical code generation: decompose a task into a problem tree, solve
//! the leaves, then compose each parent from its children's interfaces.

pub mod agents;
pub mod bench;
pub mod llm;
pub mod orchestrator;
pub mod sandbox;
pub mod solution;
pub mod tree;

pub use sandbox::{ExecLimits, Sandbox, SandboxConfig, TestReport, TestStatus};
pub use solution::{CandidateSolution, FunctionInterface, SolutionStatus};
pub use tree::{
    composition_context, leaves_postorder, validate_tree, NodeId, NodeKind, ProblemNode, ProblemTree, TaskSpec,
    TreeCaps, TreeDocument, TreeError, Violation,
};
