//! Dockerfile instruction reordering engine.
//!
//! The crate takes a Dockerfile, a git history, and per-instruction build
//! costs, and produces a reordered Dockerfile that minimizes the expected
//! cost of future rebuilds under the layer-cache invalidation model:
//! a change to any layer forces every later layer to rebuild, so volatile
//! instructions want to sit late in the file and stable, expensive ones
//! early.
//!
//! Pipeline stages, each its own module:
//!
//! - [`dockerfile`] — parse Dockerfile text into typed instructions and
//!   embedded shell into simple-command lists, with lossless serialization.
//! - [`semantics`] — per-instruction semantic elements (variables, paths,
//!   user, packages, context) derived by folding build state through the
//!   instruction sequence.
//! - [`graph`] — a typed dependency DAG built by pairwise rule matching
//!   over the semantic elements.
//! - [`history`] — modification records mined from git, matched to current
//!   instructions, and turned into normalized modification frequencies.
//! - [`cost`] — per-instruction build seconds, measured through a builder
//!   adapter or loaded from a file.
//! - [`optimizer`] — cost model and dependency-respecting reordering.
//! - [`simulator`] — layer-cache rebuild simulation and history replay.
//! - [`consistency`] — image equivalence checks on four static proxies.

pub mod consistency;
pub mod cost;
pub mod dockerfile;
pub mod graph;
pub mod history;
pub mod optimizer;
pub mod semantics;
pub mod simulator;

pub use dockerfile::{
    parse_dockerfile, serialize, ArgumentPayload, Instruction, InstructionKind, ParsedDockerfile,
    SourceSpan,
};
pub use graph::{build_graph, DependencyEdge, DependencyGraph, EdgeKind};
pub use optimizer::{optimize, total_cost, OptimizationOptions, OptimizationPlan};
pub use semantics::{extract_all, CommandKnowledgeRegistry, EnvState, SemanticElements};

#[cfg(test)]
mod thread_safety {
    // Every pipeline value is immutable after construction and must stay
    // shareable across threads.
    fn assert_send_sync<T: Send + Sync>() {}

    #[test]
    fn pipeline_types_are_send_sync() {
        assert_send_sync::<crate::ParsedDockerfile>();
        assert_send_sync::<crate::Instruction>();
        assert_send_sync::<crate::dockerfile::SimpleCommand>();
        assert_send_sync::<crate::SemanticElements>();
        assert_send_sync::<crate::EnvState>();
        assert_send_sync::<crate::CommandKnowledgeRegistry>();
        assert_send_sync::<crate::semantics::PathTrie>();
        assert_send_sync::<crate::DependencyGraph>();
        assert_send_sync::<crate::history::ModificationRecord>();
        assert_send_sync::<crate::history::FrequencyTable>();
        assert_send_sync::<crate::history::Matcher>();
        assert_send_sync::<crate::cost::CostTable>();
        assert_send_sync::<crate::OptimizationPlan>();
        assert_send_sync::<crate::simulator::ModificationEvent>();
        assert_send_sync::<crate::simulator::EfficiencyReport>();
        assert_send_sync::<crate::consistency::ConsistencyReport>();
    }
}
