//! Closed walks through the query edge: the relevant rule cycles of a subgraph.

use super::polynomial::Monomial;
use crate::error::{Error, Result};
use crate::subgraph::Subgraph;

pub const DEFAULT_WALK_CAP: usize = 1_000_000;

/// A directed closed walk `u -> v -> ... -> u` whose first edge is the
/// query edge. Nodes and edges may repeat.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClosedWalk {
    pub edges: Vec<usize>,
}

impl ClosedWalk {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Monomial this walk contributes to the single-source output: the seed
    /// relation once, times the relation of every traversed edge.
    pub fn monomial(&self, sg: &Subgraph) -> Monomial {
        let (_, r_t, _) = sg.query();
        let mut m = Monomial::var(r_t);
        for &e in &self.edges {
            m.bump(sg.edges()[e].rel);
        }
        m
    }
}

/// All closed walks of length `2..=max_len` that start with the query edge
/// and end at its source. The bare query edge is not a walk here.
pub fn enumerate_closed_walks(sg: &Subgraph, max_len: usize, cap: usize) -> Result<Vec<ClosedWalk>> {
    if max_len == 0 {
        return Err(Error::Config("walk length bound must be at least 1".into()));
    }
    let out = sg.out_edges();
    let (u, _, v) = sg.query();
    let mut walks = Vec::new();
    let mut path = vec![sg.query_edge()];

    // explicit stack of (node, next out-edge cursor)
    let mut stack: Vec<(usize, usize)> = vec![(v, 0)];
    while let Some(top) = stack.last_mut() {
        let (node, cursor) = *top;
        if path.len() >= max_len || cursor >= out[node].len() {
            stack.pop();
            path.pop();
            continue;
        }
        top.1 += 1;
        let e = out[node][cursor];
        let next = sg.edges()[e].dst;
        path.push(e);
        if next == u {
            if walks.len() >= cap {
                return Err(Error::WalkCapExceeded { cap });
            }
            walks.push(ClosedWalk { edges: path.clone() });
        }
        stack.push((next, 0));
    }
    Ok(walks)
}

/// Length of the shortest directed cycle through `u` that avoids the query
/// edge, if any.
pub fn shortest_cycle_at_source_avoiding_query(sg: &Subgraph) -> Option<usize> {
    let (u, _, _) = sg.query();
    shortest_cycle_through(sg, u)
}

fn shortest_cycle_through(sg: &Subgraph, node: usize) -> Option<usize> {
    let n = sg.num_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[node] = 0;
    let mut queue = std::collections::VecDeque::from([node]);
    let out = sg.out_edges();
    let mut best = None::<usize>;
    while let Some(x) = queue.pop_front() {
        for &e in &out[x] {
            if e == sg.query_edge() {
                continue;
            }
            let y = sg.edges()[e].dst;
            if y == node {
                let len = dist[x] + 1;
                best = Some(best.map_or(len, |b| b.min(len)));
            } else if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    best
}

/// Length of the shortest directed cycle anywhere in the subgraph that
/// avoids the query edge, if any.
pub fn shortest_cycle_avoiding_query(sg: &Subgraph) -> Option<usize> {
    (0..sg.num_nodes()).filter_map(|n| shortest_cycle_through(sg, n)).min()
}
