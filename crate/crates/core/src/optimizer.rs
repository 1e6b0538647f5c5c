//! Cost model and dependency-respecting reordering.
//!
//! The objective is the cumulative expected rebuild cost of a sequence:
//! each instruction contributes its modification frequency times the sum
//! of build times from its position to the end (the layers a change there
//! would invalidate). Reordering happens per stage, never across stages.
//!
//! Two ready-node key rules ship. The default recomputes every ready
//! node's key (frequency x remaining build time) at each pop; since the
//! remaining-time factor is shared by all candidates at a given pop, this
//! reduces to ascending frequency. The ratio rule orders ready nodes by
//! frequency/build-time, which is exchange-argument optimal on
//! unconstrained instances. A stale-key variant that keeps insertion-time
//! keys in the queue is available for comparison. With the safeguard on,
//! a result costlier than the original order falls back to the original.

use crate::dockerfile::{serialize, ParsedDockerfile};
use crate::graph::DependencyGraph;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRule {
    /// frequency x remaining build time, recomputed at every pop.
    Paper,
    /// frequency / build time, ascending.
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOptions {
    pub key_rule: KeyRule,
    /// Keep insertion-time keys instead of refreshing at every pop.
    pub stale_keys: bool,
    /// Return the original order when the optimized one costs more.
    pub safeguard: bool,
    /// Optional partition of instruction indices into readability groups.
    pub group_map: Option<Vec<Vec<usize>>>,
}

impl Default for OptimizationOptions {
    fn default() -> Self {
        OptimizationOptions {
            key_rule: KeyRule::Paper,
            stale_keys: false,
            safeguard: true,
            group_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChosenVariant {
    PaperKey,
    PaperKeyStale,
    RatioKey,
    /// Safeguard fallback; records which rule was attempted.
    OriginalFallback { attempted: String },
}

/// Per-instruction weights and final placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDetail {
    pub index: usize,
    pub frequency: f64,
    pub build_time: f64,
    pub position: usize,
}

/// The reordering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationPlan {
    pub original_order: Vec<usize>,
    pub optimized_order: Vec<usize>,
    pub cost_before: f64,
    pub cost_after: f64,
    pub chosen_variant: ChosenVariant,
    pub details: Vec<NodeDetail>,
}

impl OptimizationPlan {
    pub fn is_identity(&self) -> bool {
        self.original_order == self.optimized_order
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum OptimizeError {
    #[error("dependency cycle involving node #{0}")]
    CyclicDependency(usize),
    #[error("missing frequency/cost weight for node #{0}")]
    MissingWeight(usize),
    #[error("instance too large for exhaustive search: {0} nodes")]
    TooLarge(usize),
    #[error("group contraction induces a cycle between groups {0:?}")]
    GroupCycle(Vec<usize>),
    #[error("invalid group map: {0}")]
    InvalidGroups(String),
}

/// Cumulative expected rebuild cost of `order`:
/// `sum_i f[order[i]] * sum_{k>=i} b[order[k]]`.
pub fn total_cost(order: &[usize], freq: &[f64], cost: &[f64]) -> f64 {
    let mut suffix = 0.0;
    let mut total = 0.0;
    for &idx in order.iter().rev() {
        suffix += cost[idx];
        total += freq[idx] * suffix;
    }
    total
}

fn check_weights(n: usize, freq: &[f64], cost: &[f64]) -> Result<(), OptimizeError> {
    if freq.len() < n {
        return Err(OptimizeError::MissingWeight(freq.len()));
    }
    if cost.len() < n {
        return Err(OptimizeError::MissingWeight(cost.len()));
    }
    Ok(())
}

fn ratio_key(f: f64, b: f64) -> f64 {
    if b == 0.0 {
        if f == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        f / b
    }
}

/// Topologically schedule one block of nodes with the configured key rule.
/// `remaining_total` is the build-time sum of every not-yet-emitted node
/// across all blocks (the paper key's shared factor).
#[allow(clippy::too_many_arguments)]
fn schedule_block(
    block: &[usize],
    adj: &[Vec<usize>],
    indegree: &mut [usize],
    freq: &[f64],
    cost: &[f64],
    opts: &OptimizationOptions,
    remaining_total: &mut f64,
    out: &mut Vec<usize>,
) -> Result<(), OptimizeError> {
    let members: BTreeSet<usize> = block.iter().copied().collect();
    let mut ready: Vec<usize> = block
        .iter()
        .copied()
        .filter(|&v| indegree[v] == 0)
        .collect();
    let mut emitted = 0usize;

    // stale variant: (key at insertion, index) pairs kept un-refreshed
    let mut stale_queue: Vec<(f64, usize)> = ready
        .iter()
        .map(|&v| (freq[v] * *remaining_total, v))
        .collect();

    while emitted < block.len() {
        let next = if opts.stale_keys && opts.key_rule == KeyRule::Paper {
            // pop the minimum insertion-time key, ties by index
            let best = stale_queue
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.0.partial_cmp(&b.0)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.1.cmp(&b.1))
                })
                .map(|(pos, _)| pos);
            let Some(pos) = best else {
                return Err(OptimizeError::CyclicDependency(
                    block.iter().copied().find(|&v| indegree[v] > 0).unwrap_or(0),
                ));
            };
            stale_queue.swap_remove(pos).1
        } else {
            // fresh keys over the current ready set
            let best = ready
                .iter()
                .enumerate()
                .min_by(|(_, &a), (_, &b)| {
                    let (ka, kb) = match opts.key_rule {
                        KeyRule::Paper => (freq[a] * *remaining_total, freq[b] * *remaining_total),
                        KeyRule::Ratio => (ratio_key(freq[a], cost[a]), ratio_key(freq[b], cost[b])),
                    };
                    ka.partial_cmp(&kb)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                })
                .map(|(pos, _)| pos);
            let Some(pos) = best else {
                return Err(OptimizeError::CyclicDependency(
                    block.iter().copied().find(|&v| indegree[v] > 0).unwrap_or(0),
                ));
            };
            ready.swap_remove(pos)
        };

        out.push(next);
        emitted += 1;
        if opts.stale_keys && opts.key_rule == KeyRule::Paper {
            // the algorithm keys new nodes before removing the popped one
            for &w in &adj[next] {
                if members.contains(&w) {
                    indegree[w] -= 1;
                    if indegree[w] == 0 {
                        stale_queue.push((freq[w] * *remaining_total, w));
                    }
                }
            }
            *remaining_total -= cost[next];
        } else {
            *remaining_total -= cost[next];
            for &w in &adj[next] {
                if members.contains(&w) {
                    indegree[w] -= 1;
                    if indegree[w] == 0 {
                        ready.push(w);
                    }
                }
            }
        }
    }
    Ok(())
}

fn schedule(
    graph: &DependencyGraph,
    freq: &[f64],
    cost: &[f64],
    opts: &OptimizationOptions,
) -> Result<Vec<usize>, OptimizeError> {
    let adj = graph.adjacency();
    let blocks = graph.blocks();
    // Cross-block edges are satisfied by block order; count only in-block
    // predecessors, deduplicating parallel edges.
    let mut indegree = vec![0usize; graph.len()];
    {
        let mut seen = BTreeSet::new();
        for e in graph.edges() {
            let b = block_of(&blocks, e.to_index);
            if b == block_of(&blocks, e.from_index) && seen.insert((e.from_index, e.to_index)) {
                indegree[e.to_index] += 1;
            }
        }
    }

    let mut remaining_total: f64 = (0..graph.len()).map(|i| cost[i]).sum();
    let mut out = Vec::with_capacity(graph.len());
    for block in &blocks {
        schedule_block(
            block,
            &adj,
            &mut indegree,
            freq,
            cost,
            opts,
            &mut remaining_total,
            &mut out,
        )?;
    }
    Ok(out)
}

fn block_of(blocks: &[Vec<usize>], node: usize) -> usize {
    blocks
        .iter()
        .position(|b| b.contains(&node))
        .unwrap_or(usize::MAX)
}

/// Compute a dependency-respecting reordering minimizing the cost model.
pub fn optimize(
    graph: &DependencyGraph,
    freq: &[f64],
    cost: &[f64],
    opts: &OptimizationOptions,
) -> Result<OptimizationPlan, OptimizeError> {
    let n = graph.len();
    check_weights(n, freq, cost)?;
    let original_order: Vec<usize> = (0..n).collect();
    let cost_before = total_cost(&original_order, freq, cost);

    let optimized = match &opts.group_map {
        None => schedule(graph, freq, cost, opts)?,
        Some(groups) => {
            let contracted = group_contract(graph, freq, cost, groups)?;
            let inner_opts = OptimizationOptions {
                group_map: None,
                ..opts.clone()
            };
            let group_order = schedule(
                &contracted.graph,
                &contracted.freq,
                &contracted.cost,
                &inner_opts,
            )?;
            let mut expanded = Vec::with_capacity(n);
            for g in group_order {
                expanded.extend(contracted.groups[g].iter().copied());
            }
            expanded
        }
    };

    let cost_after = total_cost(&optimized, freq, cost);
    let attempted = match (opts.key_rule, opts.stale_keys) {
        (KeyRule::Paper, false) => ChosenVariant::PaperKey,
        (KeyRule::Paper, true) => ChosenVariant::PaperKeyStale,
        (KeyRule::Ratio, _) => ChosenVariant::RatioKey,
    };

    let (final_order, final_cost, variant) = if opts.safeguard && cost_after > cost_before {
        let name = match attempted {
            ChosenVariant::PaperKey => "paper",
            ChosenVariant::PaperKeyStale => "paper-stale",
            ChosenVariant::RatioKey => "ratio",
            ChosenVariant::OriginalFallback { .. } => unreachable!(),
        };
        (
            original_order.clone(),
            cost_before,
            ChosenVariant::OriginalFallback {
                attempted: name.to_string(),
            },
        )
    } else {
        (optimized, cost_after, attempted)
    };

    let mut position = vec![0usize; n];
    for (pos, &idx) in final_order.iter().enumerate() {
        position[idx] = pos;
    }
    let details = (0..n)
        .map(|index| NodeDetail {
            index,
            frequency: freq[index],
            build_time: cost[index],
            position: position[index],
        })
        .collect();

    Ok(OptimizationPlan {
        original_order,
        optimized_order: final_order,
        cost_before,
        cost_after: final_cost,
        chosen_variant: variant,
        details,
    })
}

/// Exhaustive minimum over all topological orders (per block), for small
/// instances. Ties resolve to the lexicographically smallest order.
pub fn brute_force_optimal(
    graph: &DependencyGraph,
    freq: &[f64],
    cost: &[f64],
    max_n: usize,
) -> Result<(Vec<usize>, f64), OptimizeError> {
    let n = graph.len();
    if n > max_n || n > 63 {
        return Err(OptimizeError::TooLarge(n));
    }
    check_weights(n, freq, cost)?;
    let adj = graph.adjacency();
    let blocks = graph.blocks();
    let mut indegree = vec![0usize; n];
    {
        let mut seen = BTreeSet::new();
        for e in graph.edges() {
            if block_of(&blocks, e.to_index) == block_of(&blocks, e.from_index)
                && seen.insert((e.from_index, e.to_index))
            {
                indegree[e.to_index] += 1;
            }
        }
    }

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current: Vec<usize> = Vec::with_capacity(n);
    let block_of_node = {
        let mut map = vec![usize::MAX; n];
        for (bi, block) in blocks.iter().enumerate() {
            for &v in block {
                map[v] = bi;
            }
        }
        map
    };

    struct Search<'a> {
        blocks: &'a [Vec<usize>],
        block_of_node: &'a [usize],
        adj: &'a [Vec<usize>],
        freq: &'a [f64],
        cost: &'a [f64],
        indegree: Vec<usize>,
        placed: u64,
        placed_per_block: Vec<usize>,
    }

    impl Search<'_> {
        fn backtrack(
            &mut self,
            block_idx: usize,
            current: &mut Vec<usize>,
            best: &mut Option<(f64, Vec<usize>)>,
        ) {
            if block_idx == self.blocks.len() {
                let c = total_cost(current, self.freq, self.cost);
                let better = match best {
                    None => true,
                    Some((bc, border)) => {
                        c < *bc - 1e-15 || ((c - *bc).abs() <= 1e-15 && &*current < border)
                    }
                };
                if better {
                    *best = Some((c, current.clone()));
                }
                return;
            }
            let block = &self.blocks[block_idx];
            if self.placed_per_block[block_idx] == block.len() {
                self.backtrack(block_idx + 1, current, best);
                return;
            }
            let ready: Vec<usize> = block
                .iter()
                .copied()
                .filter(|&v| self.indegree[v] == 0 && self.placed & (1 << v) == 0)
                .collect();
            for v in ready {
                current.push(v);
                self.placed |= 1 << v;
                self.placed_per_block[block_idx] += 1;
                for i in 0..self.adj[v].len() {
                    let w = self.adj[v][i];
                    if self.block_of_node[w] == block_idx {
                        self.indegree[w] -= 1;
                    }
                }
                self.backtrack(block_idx, current, best);
                for i in 0..self.adj[v].len() {
                    let w = self.adj[v][i];
                    if self.block_of_node[w] == block_idx {
                        self.indegree[w] += 1;
                    }
                }
                self.placed_per_block[block_idx] -= 1;
                self.placed &= !(1 << v);
                current.pop();
            }
        }
    }

    let mut search = Search {
        blocks: &blocks,
        block_of_node: &block_of_node,
        adj: &adj,
        freq,
        cost,
        indegree,
        placed: 0,
        placed_per_block: vec![0; blocks.len()],
    };
    search.backtrack(0, &mut current, &mut best);
    let (c, order) = best.ok_or(OptimizeError::CyclicDependency(0))?;
    Ok((order, c))
}

/// A contracted problem: groups become super-nodes.
#[derive(Debug)]
pub struct ContractedProblem {
    pub graph: DependencyGraph,
    pub freq: Vec<f64>,
    pub cost: Vec<f64>,
    /// Group members in source order; group id is the vector position.
    pub groups: Vec<Vec<usize>>,
}

/// Contract readability groups into super-nodes: build time is the member
/// sum, frequency the member max (a change to any member invalidates the
/// whole group). Groups must partition the index set and stay within one
/// stage.
pub fn group_contract(
    graph: &DependencyGraph,
    freq: &[f64],
    cost: &[f64],
    group_map: &[Vec<usize>],
) -> Result<ContractedProblem, OptimizeError> {
    let n = graph.len();
    check_weights(n, freq, cost)?;

    let mut seen = vec![false; n];
    for group in group_map {
        if group.is_empty() {
            return Err(OptimizeError::InvalidGroups("empty group".to_string()));
        }
        for &m in group {
            if m >= n {
                return Err(OptimizeError::InvalidGroups(format!(
                    "index {m} out of range"
                )));
            }
            if seen[m] {
                return Err(OptimizeError::InvalidGroups(format!(
                    "index {m} appears twice"
                )));
            }
            seen[m] = true;
        }
        let stage = graph.nodes[group[0]].instruction.stage_index;
        if group
            .iter()
            .any(|&m| graph.nodes[m].instruction.stage_index != stage)
        {
            return Err(OptimizeError::InvalidGroups(
                "group spans stages".to_string(),
            ));
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(OptimizeError::InvalidGroups(
            "groups do not cover every instruction".to_string(),
        ));
    }

    // order groups by their smallest member so super-node indices follow
    // source order
    let mut groups: Vec<Vec<usize>> = group_map.to_vec();
    for g in groups.iter_mut() {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);

    let group_of = {
        let mut map = vec![0usize; n];
        for (gi, g) in groups.iter().enumerate() {
            for &m in g {
                map[m] = gi;
            }
        }
        map
    };

    let mut cgraph = DependencyGraph::from_edges(groups.len(), &[])
        .expect("edge-free graph is acyclic");
    // super-nodes inherit the stage of their members so blocks stay intact
    for (gi, g) in groups.iter().enumerate() {
        cgraph.nodes[gi].instruction.stage_index = graph.nodes[g[0]].instruction.stage_index;
        cgraph.nodes[gi].instruction.preamble = graph.nodes[g[0]].instruction.preamble;
    }
    for e in graph.edges() {
        let from = group_of[e.from_index];
        let to = group_of[e.to_index];
        if from != to {
            cgraph.add_edge(crate::graph::DependencyEdge {
                from_index: from,
                to_index: to,
                kind: e.kind,
                evidence: format!("member edge #{}->#{}", e.from_index, e.to_index),
            });
        }
    }

    // contraction must not create cycles between groups
    if let Err(crate::graph::GraphError::CyclicDependency(g)) = cgraph_check(&cgraph) {
        let cycle_groups: Vec<usize> = (0..groups.len()).filter(|&gi| gi == g).collect();
        return Err(OptimizeError::GroupCycle(if cycle_groups.is_empty() {
            vec![g]
        } else {
            cycle_groups
        }));
    }

    let cfreq: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&m| freq[m]).fold(0.0, f64::max))
        .collect();
    let ccost: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|&m| cost[m]).sum())
        .collect();

    Ok(ContractedProblem {
        graph: cgraph,
        freq: cfreq,
        cost: ccost,
        groups,
    })
}

fn cgraph_check(graph: &DependencyGraph) -> Result<(), crate::graph::GraphError> {
    let adj = graph.adjacency();
    let mut indeg = graph.indegrees();
    let mut queue: Vec<usize> = (0..graph.len()).filter(|&i| indeg[i] == 0).collect();
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
    if seen == graph.len() {
        Ok(())
    } else {
        let culprit = (0..graph.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
        Err(crate::graph::GraphError::CyclicDependency(culprit))
    }
}

/// Serialize the document with instructions in plan order. An identity plan
/// reproduces the input byte-for-byte; otherwise spans travel with their
/// attached comments.
pub fn emit_dockerfile(doc: &ParsedDockerfile, plan: &OptimizationPlan) -> String {
    if plan.is_identity() {
        return serialize(doc);
    }
    let mut reordered = doc.clone();
    reordered.instructions = plan
        .optimized_order
        .iter()
        .map(|&i| doc.instructions[i].clone())
        .collect();
    serialize(&reordered)
}
