//! Typed dependency DAG over instructions.
//!
//! Edges come from pairwise rule matching over semantic elements, filtered
//! by each instruction kind's potential-dependency profile: a kind that
//! cannot carry a dependency of some category never receives edges of that
//! category, no matter what its elements contain. Pairs are judged in
//! source order only, so a freshly built graph is acyclic by construction.

use crate::dockerfile::{Instruction, InstructionKind, ParsedDockerfile};
use crate::semantics::{path_sets_overlap, ContextKey, SemanticElements};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// Dependency categories.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum EdgeKind {
    Variable,
    FileDir,
    User,
    Package,
    Context,
    Other,
}

impl std::fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EdgeKind::Variable => "variable",
            EdgeKind::FileDir => "file_dir",
            EdgeKind::User => "user",
            EdgeKind::Package => "package",
            EdgeKind::Context => "context",
            EdgeKind::Other => "other",
        };
        f.write_str(s)
    }
}

/// One typed edge: `from_index` must run before `to_index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyEdge {
    pub from_index: usize,
    pub to_index: usize,
    pub kind: EdgeKind,
    /// Human-readable reason, e.g. `uses var APP defined at #2`.
    pub evidence: String,
}

/// One graph node: an instruction with its semantic elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub index: usize,
    pub instruction: Instruction,
    pub elements: SemanticElements,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("dependency cycle involving instruction #{0}")]
    CyclicDependency(usize),
}

/// The dependency DAG. Edges are deduplicated by `(from, to, kind)` and,
/// for graphs built from a source file, always point forward in source
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyGraph {
    pub nodes: Vec<Node>,
    edges: Vec<DependencyEdge>,
    #[serde(skip)]
    edge_keys: BTreeSet<(usize, usize, EdgeKind)>,
}

impl DependencyGraph {
    pub fn new(nodes: Vec<Node>) -> Self {
        DependencyGraph {
            nodes,
            edges: Vec::new(),
            edge_keys: BTreeSet::new(),
        }
    }

    /// Synthetic graph over `n` placeholder nodes, for algorithmic use and
    /// tests that don't start from a Dockerfile.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let nodes = (0..n)
            .map(|index| Node {
                index,
                instruction: placeholder_instruction(index),
                elements: SemanticElements::default(),
            })
            .collect();
        let mut graph = DependencyGraph::new(nodes);
        for &(from, to) in edges {
            graph.add_edge(DependencyEdge {
                from_index: from,
                to_index: to,
                kind: EdgeKind::Other,
                evidence: "synthetic".to_string(),
            });
        }
        graph.check_acyclic()?;
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn add_edge(&mut self, edge: DependencyEdge) {
        let key = (edge.from_index, edge.to_index, edge.kind);
        if self.edge_keys.insert(key) {
            self.edges.push(edge);
        }
    }

    /// Outgoing adjacency lists (deduplicated by target).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if seen.insert((e.from_index, e.to_index)) {
                adj[e.from_index].push(e.to_index);
            }
        }
        for targets in &mut adj {
            targets.sort_unstable();
        }
        adj
    }

    pub fn indegrees(&self) -> Vec<usize> {
        let mut indeg = vec![0usize; self.nodes.len()];
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if seen.insert((e.from_index, e.to_index)) {
                indeg[e.to_index] += 1;
            }
        }
        indeg
    }

    /// Stage block of each node: nodes are reordered only within a block.
    /// Preamble instructions form block 0, each FROM stage its own block.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut map: BTreeMap<(usize, bool), Vec<usize>> = BTreeMap::new();
        for node in &self.nodes {
            // preamble sorts before its stage via the bool (true < false is
            // wrong way round, so invert)
            let key = (node.instruction.stage_index, !node.instruction.preamble);
            map.entry(key).or_default().push(node.index);
        }
        map.into_values().collect()
    }

    fn check_acyclic(&self) -> Result<(), GraphError> {
        let adj = self.adjacency();
        let mut indeg = self.indegrees();
        let mut queue: Vec<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &w in &adj[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push(w);
                }
            }
        }
        if seen == self.nodes.len() {
            Ok(())
        } else {
            let culprit = (0..self.nodes.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
            Err(GraphError::CyclicDependency(culprit))
        }
    }
}

fn placeholder_instruction(index: usize) -> Instruction {
    Instruction {
        kind: InstructionKind::Run,
        flags: Vec::new(),
        arguments: crate::dockerfile::ArgumentPayload::ShellText(format!("synthetic-{index}")),
        span: crate::dockerfile::SourceSpan {
            start_line: index + 1,
            end_line: index + 1,
            raw_text: String::new(),
        },
        stage_index: 0,
        index,
        preamble: false,
        heredoc: false,
    }
}

/// Potential-dependency profile of each instruction kind (reader side).
/// A kind missing a category never receives edges of that category.
fn potential(kind: InstructionKind) -> &'static [EdgeKind] {
    use EdgeKind::*;
    match kind {
        InstructionKind::Arg => &[Variable],
        InstructionKind::Env => &[Variable, Context],
        InstructionKind::Copy | InstructionKind::Add | InstructionKind::Volume => {
            &[FileDir, Context]
        }
        InstructionKind::User => &[User, Variable],
        InstructionKind::Run | InstructionKind::Shell => {
            &[Variable, FileDir, User, Package, Context]
        }
        InstructionKind::Workdir => &[Variable, Context],
        InstructionKind::Expose => &[Context],
        InstructionKind::Healthcheck => &[FileDir, Other],
        InstructionKind::Cmd | InstructionKind::Entrypoint => &[Variable, Context, Other],
        InstructionKind::From | InstructionKind::Onbuild | InstructionKind::Stopsignal => &[Other],
        InstructionKind::Label | InstructionKind::Maintainer => &[],
    }
}

fn can_receive(kind: InstructionKind, edge: EdgeKind) -> bool {
    edge == EdgeKind::Other || potential(kind).contains(&edge)
}

/// Kinds whose execution depends on the active user.
fn executes_as_user(kind: InstructionKind) -> bool {
    matches!(
        kind,
        InstructionKind::Run | InstructionKind::Shell | InstructionKind::User
    )
}

/// Judge one ordered pair of nodes (`a` before `b` in source order) and
/// return every edge `a -> b` the rules justify. `nodes` supplies the
/// context needed for latest-definition/latest-writer checks.
pub fn judge_pair(nodes: &[Node], a_idx: usize, b_idx: usize) -> Vec<DependencyEdge> {
    let a = &nodes[a_idx];
    let b = &nodes[b_idx];
    debug_assert!(a_idx < b_idx);
    let mut edges = Vec::new();
    let mut push = |kind: EdgeKind, evidence: String| {
        edges.push(DependencyEdge {
            from_index: a_idx,
            to_index: b_idx,
            kind,
            evidence,
        });
    };

    let same_stage = a.instruction.stage_index == b.instruction.stage_index
        && a.instruction.preamble == b.instruction.preamble;

    // Pre-FROM ARGs are pinned before every FROM and provide its variables.
    if a.instruction.preamble && !b.instruction.preamble {
        if b.instruction.kind == InstructionKind::From {
            push(
                EdgeKind::Other,
                format!("global ARG precedes FROM #{b_idx}"),
            );
            for v in b.elements.vars_used.intersection(&a.elements.vars_defined) {
                if latest_definer(nodes, v, a_idx, b_idx) {
                    push(EdgeKind::Variable, format!("FROM uses global ARG {v}"));
                }
            }
        }
        return edges;
    }
    if !same_stage {
        // Cross-stage pairs carry no rule edges; COPY --from is resolved by
        // the graph builder, which knows the stage alias map.
        return edges;
    }

    // FROM dominates its stage.
    if a.elements.misc.from {
        push(
            EdgeKind::Other,
            format!("stage base image for #{b_idx}"),
        );
        return edges;
    }

    // Position-pinned kinds keep their relative order against everything.
    if a.elements.misc.pinned || b.elements.misc.pinned {
        push(
            EdgeKind::Other,
            format!(
                "{} keeps its position",
                if b.elements.misc.pinned {
                    b.instruction.kind.keyword()
                } else {
                    a.instruction.kind.keyword()
                }
            ),
        );
    }

    // Duplicates of last-one-wins kinds are chained.
    if a.instruction.kind == b.instruction.kind
        && matches!(
            a.instruction.kind,
            InstructionKind::Cmd | InstructionKind::Entrypoint
        )
        && latest_of_kind(nodes, a.instruction.kind, a_idx, b_idx)
    {
        push(
            EdgeKind::Other,
            format!("duplicate {} order preserved", a.instruction.kind.keyword()),
        );
    }

    // Variable: b uses (or redefines) a variable a defines; the latest
    // definition before b wins.
    if can_receive(b.instruction.kind, EdgeKind::Variable) {
        let used_or_redefined: BTreeSet<&String> = b
            .elements
            .vars_used
            .union(&b.elements.vars_defined)
            .collect();
        for v in used_or_redefined {
            if a.elements.vars_defined.contains(v) && latest_definer(nodes, v, a_idx, b_idx) {
                let what = if b.elements.vars_used.contains(v) {
                    "uses"
                } else {
                    "redefines"
                };
                push(
                    EdgeKind::Variable,
                    format!("{what} var {v} defined at #{a_idx}"),
                );
            }
        }
    }

    // FileDir: b reads a path a writes (containment either way).
    if can_receive(b.instruction.kind, EdgeKind::FileDir) {
        if let Some((out, inp)) = path_sets_overlap(&a.elements.paths_out, &b.elements.paths_in) {
            push(
                EdgeKind::FileDir,
                format!("reads {inp} written at #{a_idx} ({out})"),
            );
        }
    }

    // Opaque shell bodies: conservative edges. An opaque b depends on every
    // prior file writer, package installer and context writer; an opaque a
    // is a barrier for later file readers.
    if b.elements.misc.opaque {
        if !a.elements.paths_out.is_empty() {
            push(EdgeKind::FileDir, "opaque shell follows file writer".into());
        }
        if !a.elements.pkgs_installed.is_empty() {
            push(
                EdgeKind::Package,
                "opaque shell follows package install".into(),
            );
        }
        if !a.elements.context_writes.is_empty() {
            push(
                EdgeKind::Context,
                "opaque shell follows context change".into(),
            );
        }
    }
    if a.elements.misc.opaque
        && can_receive(b.instruction.kind, EdgeKind::FileDir)
        && (!b.elements.paths_in.is_empty() || b.elements.misc.opaque)
    {
        push(EdgeKind::FileDir, "reads files after opaque shell".into());
    }

    // User: most recent user-writer before an instruction that executes.
    if executes_as_user(b.instruction.kind)
        && a.elements.user_written.is_some()
        && latest_user_writer(nodes, a_idx, b_idx)
    {
        push(
            EdgeKind::User,
            format!(
                "runs as user set at #{a_idx} ({})",
                a.elements.user_written.as_deref().unwrap_or("?")
            ),
        );
    }

    // Package: b invokes something a installs.
    if can_receive(b.instruction.kind, EdgeKind::Package) {
        let shared: Vec<&String> = b
            .elements
            .pkgs_used
            .intersection(&a.elements.pkgs_installed)
            .collect();
        if let Some(pkg) = shared.first() {
            push(
                EdgeKind::Package,
                format!("uses package {pkg} installed at #{a_idx}"),
            );
        }
    }

    // Context: most recent writer of each context key b reads.
    if can_receive(b.instruction.kind, EdgeKind::Context) {
        for key in b.elements.context_reads.intersection(&a.elements.context_writes) {
            if latest_context_writer(nodes, *key, a_idx, b_idx) {
                push(
                    EdgeKind::Context,
                    format!("reads {key:?} context set at #{a_idx}"),
                );
            }
        }
    }

    edges
}

fn latest_definer(nodes: &[Node], var: &str, a_idx: usize, b_idx: usize) -> bool {
    !nodes[a_idx + 1..b_idx]
        .iter()
        .any(|n| n.elements.vars_defined.contains(var))
}

fn latest_user_writer(nodes: &[Node], a_idx: usize, b_idx: usize) -> bool {
    !nodes[a_idx + 1..b_idx]
        .iter()
        .any(|n| n.elements.user_written.is_some())
}

fn latest_context_writer(nodes: &[Node], key: ContextKey, a_idx: usize, b_idx: usize) -> bool {
    !nodes[a_idx + 1..b_idx]
        .iter()
        .any(|n| n.elements.context_writes.contains(&key))
}

fn latest_of_kind(nodes: &[Node], kind: InstructionKind, a_idx: usize, b_idx: usize) -> bool {
    !nodes[a_idx + 1..b_idx]
        .iter()
        .any(|n| n.instruction.kind == kind)
}

/// Build the dependency graph: the union of `judge_pair` over all ordered
/// pairs within each stage, plus inter-stage edges for `COPY --from`.
pub fn build_graph(
    doc: &ParsedDockerfile,
    elements: &[SemanticElements],
) -> Result<DependencyGraph, GraphError> {
    assert_eq!(doc.instructions.len(), elements.len());
    let nodes: Vec<Node> = doc
        .instructions
        .iter()
        .cloned()
        .zip(elements.iter().cloned())
        .map(|(instruction, elements)| Node {
            index: instruction.index,
            instruction,
            elements,
        })
        .collect();

    let mut graph = DependencyGraph::new(nodes);
    let n = graph.nodes.len();
    for b in 0..n {
        for a in 0..b {
            for edge in judge_pair(&graph.nodes, a, b) {
                graph.add_edge(edge);
            }
        }
        // COPY --from=<stage|alias>: the copy depends on the source stage
        // being complete, i.e. on its last instruction.
        if let Some(reference) = graph.nodes[b].elements.misc.copy_from.clone() {
            if let Some(stage) = doc.resolve_stage_ref(&reference) {
                if let Some(&last) = doc.stage_members(stage).iter().max() {
                    if last < b {
                        graph.add_edge(DependencyEdge {
                            from_index: last,
                            to_index: b,
                            kind: EdgeKind::Other,
                            evidence: format!("copies artifacts from stage {stage}"),
                        });
                    }
                }
            }
        }
    }

    graph.check_acyclic()?;
    Ok(graph)
}

/// Graph export formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

/// Render the graph as DOT or JSON. The JSON form round-trips to an equal
/// graph via [`import_json`].
pub fn export_graph(graph: &DependencyGraph, format: ExportFormat) -> String {
    match format {
        ExportFormat::Dot => {
            let mut out = String::from("digraph dependencies {\n");
            for node in &graph.nodes {
                let _ = writeln!(
                    out,
                    "  n{} [label=\"#{} {}\"];",
                    node.index,
                    node.index,
                    node.instruction.kind.keyword()
                );
            }
            for e in graph.edges() {
                let _ = writeln!(
                    out,
                    "  n{} -> n{} [label=\"{}\"];",
                    e.from_index, e.to_index, e.kind
                );
            }
            out.push_str("}\n");
            out
        }
        ExportFormat::Json => serde_json::to_string_pretty(graph).expect("graph serializes"),
    }
}

/// Parse a graph exported as JSON.
pub fn import_json(text: &str) -> Result<DependencyGraph, serde_json::Error> {
    let mut graph: DependencyGraph = serde_json::from_str(text)?;
    graph.edge_keys = graph
        .edges
        .iter()
        .map(|e| (e.from_index, e.to_index, e.kind))
        .collect();
    Ok(graph)
}
