//! QDMR step decompositions as directed graphs, and an exact graph edit
//! distance between them.
//!
//! A decomposition is one step per ";"-separated segment, each stripped of
//! its leading "return". A step referencing "#k" gains an edge to step k;
//! references may only point at strictly earlier steps, so the graph is a
//! DAG. Edit costs are unit: node insert/delete/relabel and edge
//! insert/delete all cost 1. The reported score inverts and normalizes the
//! distance so that higher is better:
//! `1 - GED / (|V1| + |V2| + |E1| + |E2|)`, clamped to [0, 1].

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Exact search is exponential in the worst case; this cap keeps it honest.
pub const DEFAULT_GED_NODE_CAP: usize = 12;

/// A parsed QDMR decomposition: one node per step (its operation text) and a
/// directed edge from each step to every earlier step it references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QdmrGraph {
    pub nodes: Vec<String>,
    /// (from, to) pairs of 0-based step indices, with `to < from`.
    pub edges: Vec<(usize, usize)>,
}

impl QdmrGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }
}

/// Parses QDMR text: ";"-separated steps, "return" prefixes stripped, "#k"
/// tokens resolved to edges. A reference at or beyond its own step is
/// malformed.
pub fn qdmr_parse(text: &str) -> Result<QdmrGraph, MetricError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut seen_edges = HashSet::new();
    for segment in text.split(';') {
        let mut step = segment.trim();
        if step.is_empty() {
            continue;
        }
        let lower = step.to_lowercase();
        if let Some(rest) = lower.strip_prefix("return") {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                step = step["return".len()..].trim_start();
            }
        }
        let index = nodes.len(); // 0-based; step number is index + 1
        let bytes = step.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'#' {
                let start = i + 1;
                let mut end = start;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
                if end > start {
                    let k: usize = step[start..end].parse().unwrap_or(usize::MAX);
                    if k == 0 || k > index {
                        return Err(MetricError::MalformedReference {
                            step: index + 1,
                            token: step[i..end].to_string(),
                        });
                    }
                    if seen_edges.insert((index, k - 1)) {
                        edges.push((index, k - 1));
                    }
                }
                i = end;
            } else {
                i += 1;
            }
        }
        nodes.push(step.to_string());
    }
    Ok(QdmrGraph { nodes, edges })
}

// Best-first search state: g1 nodes 0..i are decided (mapped to a g2 node or
// deleted). `assignment[u] = Some(v)` maps u to v, `None` deletes u.
struct SearchState {
    cost: u32,
    assignment: Vec<Option<usize>>,
    used: Vec<bool>,
}

fn heuristic(remaining_g1: usize, remaining_g2: usize) -> u32 {
    remaining_g1.abs_diff(remaining_g2) as u32
}

fn pair_edge_cost(g1: &QdmrGraph, g2: &QdmrGraph, state: &SearchState, u: usize, v: Option<usize>) -> u32 {
    let mut cost = 0;
    for (prev_u, &prev_v) in state.assignment.iter().enumerate() {
        for (a, b) in [(u, prev_u), (prev_u, u)] {
            let in_g1 = g1.has_edge(a, b);
            let in_g2 = match (v, prev_v) {
                (Some(v), Some(pv)) => {
                    let (x, y) = if a == u { (v, pv) } else { (pv, v) };
                    g2.has_edge(x, y)
                }
                // An edge incident to a deleted node cannot survive.
                _ => false,
            };
            if in_g1 != in_g2 {
                cost += 1;
            }
        }
    }
    cost
}

fn leaf_cost(g2: &QdmrGraph, used: &[bool]) -> u32 {
    let inserted_nodes = used.iter().filter(|&&u| !u).count() as u32;
    let inserted_edges = g2
        .edges
        .iter()
        .filter(|&&(a, b)| !used[a] || !used[b])
        .count() as u32;
    inserted_nodes + inserted_edges
}

/// Exact graph edit distance with unit costs, by best-first search over node
/// assignments. Exponential in the worst case; callers cap the node counts.
pub fn graph_edit_distance(g1: &QdmrGraph, g2: &QdmrGraph) -> u32 {
    let n1 = g1.node_count();
    let n2 = g2.node_count();

    // (f, tiebreak counter) -> state. Reverse for a min-heap.
    let mut heap: BinaryHeap<(Reverse<u32>, Reverse<u64>, usize)> = BinaryHeap::new();
    let mut states: Vec<SearchState> = Vec::new();
    let mut counter = 0u64;

    let mut initial = SearchState { cost: 0, assignment: Vec::new(), used: vec![false; n2] };
    let f0 = if n1 == 0 {
        initial.cost += leaf_cost(g2, &initial.used);
        initial.cost
    } else {
        heuristic(n1, n2)
    };
    states.push(initial);
    heap.push((Reverse(f0), Reverse(counter), 0));

    while let Some((Reverse(f), _, idx)) = heap.pop() {
        let depth = states[idx].assignment.len();
        if depth == n1 {
            // Leaf cost was folded in when the state was generated.
            return f;
        }
        let u = depth;
        let mut successors: Vec<SearchState> = Vec::new();

        // Map u to each unused g2 node.
        for v in 0..n2 {
            if states[idx].used[v] {
                continue;
            }
            let relabel = u32::from(g1.nodes[u] != g2.nodes[v]);
            let edge_cost = pair_edge_cost(g1, g2, &states[idx], u, Some(v));
            let mut assignment = states[idx].assignment.clone();
            assignment.push(Some(v));
            let mut used = states[idx].used.clone();
            used[v] = true;
            successors.push(SearchState {
                cost: states[idx].cost + relabel + edge_cost,
                assignment,
                used,
            });
        }
        // Delete u.
        {
            let edge_cost = pair_edge_cost(g1, g2, &states[idx], u, None);
            let mut assignment = states[idx].assignment.clone();
            assignment.push(None);
            successors.push(SearchState {
                cost: states[idx].cost + 1 + edge_cost,
                assignment,
                used: states[idx].used.clone(),
            });
        }

        for mut s in successors {
            let depth = s.assignment.len();
            let remaining_g2 = s.used.iter().filter(|&&u| !u).count();
            let f = if depth == n1 {
                s.cost += leaf_cost(g2, &s.used);
                s.cost
            } else {
                s.cost + heuristic(n1 - depth, remaining_g2)
            };
            counter += 1;
            states.push(s);
            heap.push((Reverse(f), Reverse(counter), states.len() - 1));
        }
    }
    unreachable!("search space always contains the all-delete mapping")
}

/// Normalized, inverted GED score in [0, 1]; 1 means identical graphs.
///
/// The raw edit distance is lower-is-better; downstream aggregation requires
/// higher-is-better, so the score is `1 - GED / (|V1|+|V2|+|E1|+|E2|)`. Two
/// empty graphs are identical, scoring 1.
pub fn qdmr_ged_score(pred: &QdmrGraph, gold: &QdmrGraph) -> Result<f64, MetricError> {
    qdmr_ged_score_with_cap(pred, gold, DEFAULT_GED_NODE_CAP)
}

/// As [`qdmr_ged_score`] with an explicit node cap for the exact search.
pub fn qdmr_ged_score_with_cap(
    pred: &QdmrGraph,
    gold: &QdmrGraph,
    node_cap: usize,
) -> Result<f64, MetricError> {
    for g in [pred, gold] {
        if g.node_count() > node_cap {
            return Err(MetricError::GraphTooLarge { nodes: g.node_count(), cap: node_cap });
        }
    }
    let denom =
        (pred.node_count() + gold.node_count() + pred.edge_count() + gold.edge_count()) as f64;
    if denom == 0.0 {
        return Ok(1.0);
    }
    let ged = graph_edit_distance(pred, gold) as f64;
    Ok((1.0 - ged / denom).clamp(0.0, 1.0))
}
