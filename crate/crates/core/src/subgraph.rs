//! k-hop enclosing/unclosing subgraph extraction around a query triple.
//!
//! Extraction never labels nodes. The double-radius labeling used by earlier
//! subgraph reasoners lives here only as a baseline for timing comparisons
//! (see [`crate::bench`]).

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// Induced by the intersection of the two k-hop neighborhoods.
    Enclosing,
    /// Induced by their union.
    Unclosing,
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enclosing" => Ok(Scope::Enclosing),
            "unclosing" => Ok(Scope::Unclosing),
            other => Err(Error::Config(format!("unknown scope {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scope::Enclosing => "enclosing",
            Scope::Unclosing => "unclosing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractionConfig {
    pub hops: usize,
    pub scope: Scope,
    pub max_nodes: Option<usize>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            hops: 3,
            scope: Scope::Enclosing,
            max_nodes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeOrigin {
    /// Index of the edge in the parent graph.
    Graph(usize),
    /// The inserted query edge.
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubEdge {
    pub src: usize,
    pub rel: RelationId,
    pub dst: usize,
    pub origin: EdgeOrigin,
}

/// Locally re-indexed subgraph with one distinguished query edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    global_ids: Vec<EntityId>,
    edges: Vec<SubEdge>,
    query_edge: usize,
    hops: usize,
}

impl Subgraph {
    /// Build a subgraph directly from local edges. The query edge
    /// `(u, rel, v)` is appended after `edges`; `global_ids` defaults to the
    /// identity.
    pub fn from_edges(
        num_nodes: usize,
        query: (usize, RelationId, usize),
        edges: &[(usize, RelationId, usize)],
    ) -> Result<Self> {
        let (u, r, v) = query;
        if u == v {
            return Err(Error::InvalidQuery("query endpoints must differ".into()));
        }
        let check = |n: usize| {
            if n < num_nodes {
                Ok(())
            } else {
                Err(Error::Construction(format!(
                    "local node {n} outside 0..{num_nodes}"
                )))
            }
        };
        check(u)?;
        check(v)?;
        let mut out = Vec::with_capacity(edges.len() + 1);
        for (i, &(s, rel, d)) in edges.iter().enumerate() {
            check(s)?;
            check(d)?;
            if (s, rel, d) == query {
                return Err(Error::Construction(
                    "non-query edge duplicates the query triple".into(),
                ));
            }
            out.push(SubEdge {
                src: s,
                rel,
                dst: d,
                origin: EdgeOrigin::Graph(i),
            });
        }
        let query_edge = out.len();
        out.push(SubEdge {
            src: u,
            rel: r,
            dst: v,
            origin: EdgeOrigin::Query,
        });
        Ok(Subgraph {
            global_ids: (0..num_nodes).collect(),
            edges: out,
            query_edge,
            hops: 0,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.global_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn global_ids(&self) -> &[EntityId] {
        &self.global_ids
    }

    pub fn edges(&self) -> &[SubEdge] {
        &self.edges
    }

    pub fn query_edge(&self) -> usize {
        self.query_edge
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    /// `(u_local, r_t, v_local)`.
    pub fn query(&self) -> (usize, RelationId, usize) {
        let q = self.edges[self.query_edge];
        (q.src, q.rel, q.dst)
    }

    pub fn max_relation(&self) -> Option<RelationId> {
        self.edges.iter().map(|e| e.rel).max()
    }

    /// Outgoing edge indices per local node, in edge order.
    pub fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes()];
        for (i, e) in self.edges.iter().enumerate() {
            out[e.src].push(i);
        }
        out
    }

    /// Same subgraph with local node ids and edge order permuted.
    /// `node_perm[old] = new`, `edge_order[new_position] = old_index`.
    pub fn permuted(&self, node_perm: &[usize], edge_order: &[usize]) -> Subgraph {
        let mut global_ids = vec![0; self.num_nodes()];
        for (old, &new) in node_perm.iter().enumerate() {
            global_ids[new] = self.global_ids[old];
        }
        let mut query_edge = 0;
        let edges = edge_order
            .iter()
            .enumerate()
            .map(|(pos, &old)| {
                if old == self.query_edge {
                    query_edge = pos;
                }
                let e = self.edges[old];
                SubEdge {
                    src: node_perm[e.src],
                    dst: node_perm[e.dst],
                    ..e
                }
            })
            .collect();
        Subgraph {
            global_ids,
            edges,
            query_edge,
            hops: self.hops,
        }
    }

    /// Same subgraph plus extra non-query edges.
    pub fn with_extra_edges(&self, extra_nodes: usize, extra: &[(usize, RelationId, usize)]) -> Subgraph {
        let mut sg = self.clone();
        let base = sg.global_ids.len();
        let next_global = sg.global_ids.iter().max().map_or(0, |m| m + 1);
        sg.global_ids.extend((0..extra_nodes).map(|i| next_global + i));
        debug_assert!(extra.iter().all(|&(s, _, d)| s < base + extra_nodes && d < base + extra_nodes));
        let start = sg.edges.len();
        sg.edges.extend(extra.iter().enumerate().map(|(i, &(src, rel, dst))| SubEdge {
            src,
            rel,
            dst,
            origin: EdgeOrigin::Graph(start + i),
        }));
        sg
    }

    /// Plain-text edge list, one edge per line, query edge flagged.
    pub fn to_edge_list(&self, entity_name: impl Fn(EntityId) -> String, rel_name: impl Fn(RelationId) -> String) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# nodes={} edges={} hops={}",
            self.num_nodes(),
            self.num_edges(),
            self.hops
        );
        for (i, e) in self.edges.iter().enumerate() {
            let flag = if i == self.query_edge { "\tQUERY" } else { "" };
            let _ = writeln!(
                s,
                "{}\t{}\t{}{}",
                entity_name(self.global_ids[e.src]),
                rel_name(e.rel),
                entity_name(self.global_ids[e.dst]),
                flag
            );
        }
        s
    }
}

const UNREACHED: u32 = u32::MAX;

/// Undirected BFS ball around a node: dense distances plus the reached
/// nodes in visit order.
struct Ball {
    dist: Vec<u32>,
    reached: Vec<EntityId>,
}

impl Ball {
    fn contains(&self, node: EntityId) -> bool {
        self.dist[node] != UNREACHED
    }
}

/// Hop distances (undirected) from `node`, truncated at `k`, never crossing
/// an edge listed in `skip`.
fn bfs_ball(graph: &KnowledgeGraph, node: EntityId, k: usize, skip: &[Triple]) -> Ball {
    let mut dist = vec![UNREACHED; graph.entity_count()];
    dist[node] = 0;
    let mut reached = vec![node];
    let mut head = 0;
    while head < reached.len() {
        let x = reached[head];
        head += 1;
        let d = dist[x];
        if d as usize >= k {
            continue;
        }
        for adj in graph.out_adj(x).iter().chain(graph.in_adj(x)) {
            if dist[adj.node] != UNREACHED || (!skip.is_empty() && skip.contains(&graph.edge(adj.edge))) {
                continue;
            }
            dist[adj.node] = d + 1;
            reached.push(adj.node);
        }
    }
    Ball { dist, reached }
}

/// All entities within `k` undirected hops of `node`, including itself,
/// in ascending id order.
pub fn khop_neighbors(graph: &KnowledgeGraph, node: EntityId, k: usize) -> Result<Vec<EntityId>> {
    if node >= graph.entity_count() {
        return Err(Error::InvalidQuery(format!(
            "entity {node} outside 0..{}",
            graph.entity_count()
        )));
    }
    let mut nodes = bfs_ball(graph, node, k, &[]).reached;
    nodes.sort_unstable();
    Ok(nodes)
}

fn check_query(graph: &KnowledgeGraph, q: &Triple) -> Result<()> {
    if q.head == q.tail {
        return Err(Error::InvalidQuery("query endpoints must differ".into()));
    }
    if q.head >= graph.entity_count() || q.tail >= graph.entity_count() {
        return Err(Error::InvalidQuery("query entity out of range".into()));
    }
    if q.rel >= graph.base_relations() {
        return Err(Error::InvalidQuery(format!(
            "query relation {} is not a base relation",
            q.rel
        )));
    }
    Ok(())
}

/// Extract the subgraph for `query = (u, r_t, v)`.
///
/// Node set: intersection (enclosing) or union (unclosing) of the k-hop
/// neighborhoods, plus `u` and `v`. Neighborhoods are taken with the query
/// triple and its inverse companion absent, so a positive that is already in
/// the graph sees the same neighborhoods as an unseen one. Edges: every parent edge between kept
/// nodes except copies of `(u, r_t, v)` and its inverse companion; then one
/// query edge is appended.
pub fn extract(graph: &KnowledgeGraph, query: Triple, cfg: &ExtractionConfig) -> Result<Subgraph> {
    check_query(graph, &query)?;
    if cfg.hops == 0 {
        return Err(Error::Config("hops must be at least 1".into()));
    }
    let (u, r_t, v) = (query.head, query.rel, query.tail);
    let inverse = graph
        .has_inverses()
        .then(|| Triple::new(v, graph.inverse_relation(r_t), u));
    let removed: Vec<Triple> = std::iter::once(query).chain(inverse).collect();
    let du = bfs_ball(graph, u, cfg.hops, &removed);
    let dv = bfs_ball(graph, v, cfg.hops, &removed);

    let mut nodes: Vec<EntityId> = match cfg.scope {
        Scope::Enclosing => du.reached.iter().copied().filter(|&n| dv.contains(n)).collect(),
        Scope::Unclosing => {
            let mut all = du.reached.clone();
            all.extend(dv.reached.iter().copied().filter(|&n| !du.contains(n)));
            all
        }
    };
    // u and v are always reachable from themselves, so both are present.
    if cfg.scope == Scope::Enclosing {
        for n in [u, v] {
            if !dv.contains(n) || !du.contains(n) {
                nodes.push(n);
            }
        }
    }
    nodes.sort_unstable();
    nodes.dedup();

    if let Some(cap) = cfg.max_nodes {
        if nodes.len() > cap {
            return Err(Error::SubgraphTooLarge {
                size: nodes.len(),
                cap,
            });
        }
    }

    // reuse u's distance buffer as the global -> local index map
    let mut local = du.dist;
    local.iter_mut().for_each(|x| *x = UNREACHED);
    for (i, &g) in nodes.iter().enumerate() {
        local[g] = i as u32;
    }

    let mut edges = Vec::new();
    for (src_local, &g) in nodes.iter().enumerate() {
        for adj in graph.out_adj(g) {
            let dst_local = local[adj.node];
            if dst_local == UNREACHED {
                continue;
            }
            let t = Triple::new(g, adj.rel, adj.node);
            if removed.contains(&t) {
                continue;
            }
            edges.push(SubEdge {
                src: src_local,
                rel: adj.rel,
                dst: dst_local as usize,
                origin: EdgeOrigin::Graph(adj.edge),
            });
        }
    }
    let query_edge = edges.len();
    edges.push(SubEdge {
        src: local[u] as usize,
        rel: r_t,
        dst: local[v] as usize,
        origin: EdgeOrigin::Query,
    });

    Ok(Subgraph {
        global_ids: nodes,
        edges,
        query_edge,
        hops: cfg.hops,
    })
}

/// Per-node hop distances to the two query endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLabel {
    pub dist_u: Option<usize>,
    pub dist_v: Option<usize>,
}

fn local_bfs(adj: &[Vec<usize>], root: usize, limit: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(x) = queue.pop_front() {
        let d = dist[x].unwrap_or(0);
        if d == limit {
            continue;
        }
        for &y in &adj[x] {
            if dist[y].is_none() {
                dist[y] = Some(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

/// Double-radius labels: undirected hop distance of every local node to `u`
/// and to `v`, computed over the subgraph without its query edge. Distances
/// beyond the subgraph's hop count (or unreachable nodes) are `None`.
pub fn double_radius_label(sg: &Subgraph) -> Vec<NodeLabel> {
    let n = sg.num_nodes();
    let mut adj = vec![Vec::new(); n];
    for (i, e) in sg.edges().iter().enumerate() {
        if i == sg.query_edge() {
            continue;
        }
        adj[e.src].push(e.dst);
        adj[e.dst].push(e.src);
    }
    let (u, _, v) = sg.query();
    let limit = if sg.hops() == 0 { usize::MAX } else { sg.hops() };
    let du = local_bfs(&adj, u, limit);
    let dv = local_bfs(&adj, v, limit);
    du.into_iter()
        .zip(dv)
        .map(|(dist_u, dist_v)| NodeLabel { dist_u, dist_v })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle(inverses: bool) -> KnowledgeGraph {
        // u=0 -r0-> v=1, v -r1-> a=2, a -r2-> u
        let t = [Triple::new(0, 0, 1), Triple::new(1, 1, 2), Triple::new(2, 2, 0)];
        KnowledgeGraph::build(&t, 3, 3, inverses).unwrap()
    }

    #[test]
    fn isolated_node_neighbors() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 3, 1, true).unwrap();
        assert_eq!(khop_neighbors(&g, 2, 5).unwrap(), vec![2]);
    }

    #[test]
    fn path_one_hop() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(1, 0, 2)], 3, 1, false)
            .unwrap();
        assert_eq!(khop_neighbors(&g, 0, 1).unwrap(), vec![0, 1]);
        assert!(khop_neighbors(&g, 9, 1).is_err());
    }

    #[test]
    fn no_common_neighbor_enclosing() {
        // 0 - 2 and 1 - 3, nothing shared within one hop
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 2), Triple::new(1, 0, 3)], 4, 1, true)
            .unwrap();
        let cfg = ExtractionConfig {
            hops: 1,
            ..Default::default()
        };
        let sg = extract(&g, Triple::new(0, 0, 1), &cfg).unwrap();
        assert_eq!(sg.global_ids(), &[0, 1]);
        assert_eq!(sg.num_edges(), 1);
        assert_eq!(sg.query(), (0, 0, 1));
    }

    #[test]
    fn triangle_enclosing() {
        let cfg = ExtractionConfig::default();
        let plain = extract(&triangle(false), Triple::new(0, 0, 1), &cfg).unwrap();
        assert_eq!(plain.num_nodes(), 3);
        assert_eq!(plain.num_edges(), 3);
        let aug = extract(&triangle(true), Triple::new(0, 0, 1), &cfg).unwrap();
        assert_eq!(aug.num_nodes(), 3);
        // query + 2 graph edges + their 2 inverses
        assert_eq!(aug.num_edges(), 5);
        let query_like = aug
            .edges()
            .iter()
            .filter(|e| (e.src, e.rel, e.dst) == (0, 0, 1))
            .count();
        assert_eq!(query_like, 1);
        assert!(aug.edges().iter().all(|e| (e.src, e.rel, e.dst) != (1, 3, 0)));
    }

    #[test]
    fn positive_copy_removed() {
        let t = [Triple::new(0, 0, 1), Triple::new(0, 0, 1), Triple::new(1, 1, 0)];
        let g = KnowledgeGraph::build(&t, 2, 2, true).unwrap();
        let sg = extract(&g, Triple::new(0, 0, 1), &ExtractionConfig::default()).unwrap();
        let q = sg
            .edges()
            .iter()
            .filter(|e| (e.src, e.rel, e.dst) == (0, 0, 1))
            .collect::<Vec<_>>();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].origin, EdgeOrigin::Query);
        // (1, s, 0) and its inverse (0, s^-1, 1) survive
        assert_eq!(sg.num_edges(), 3);
    }

    #[test]
    fn neighborhoods_ignore_the_query_triple() {
        // 0 -r0-> 1 is the only link between two stars
        let mut t = vec![Triple::new(0, 0, 1)];
        t.extend((2..5).map(|a| Triple::new(0, 1, a)));
        t.extend((5..8).map(|b| Triple::new(1, 1, b)));
        let with = KnowledgeGraph::build(&t, 8, 2, true).unwrap();
        let without = KnowledgeGraph::build(&t[1..], 8, 2, true).unwrap();
        for scope in [Scope::Enclosing, Scope::Unclosing] {
            let cfg = ExtractionConfig { scope, ..ExtractionConfig::default() };
            let a = extract(&with, Triple::new(0, 0, 1), &cfg).unwrap();
            let b = extract(&without, Triple::new(0, 0, 1), &cfg).unwrap();
            assert_eq!(a.global_ids(), b.global_ids());
            assert_eq!(a.num_edges(), b.num_edges());
        }
        let enclosing = extract(&with, Triple::new(0, 0, 1), &ExtractionConfig::default()).unwrap();
        assert_eq!(enclosing.global_ids(), &[0, 1]);
    }

    #[test]
    fn rejects_bad_queries() {
        let g = triangle(true);
        let cfg = ExtractionConfig::default();
        assert!(extract(&g, Triple::new(0, 0, 0), &cfg).is_err());
        assert!(extract(&g, Triple::new(0, 3, 1), &cfg).is_err());
        let capped = ExtractionConfig {
            max_nodes: Some(2),
            ..cfg
        };
        match extract(&g, Triple::new(0, 0, 1), &capped) {
            Err(Error::SubgraphTooLarge { size, cap }) => assert_eq!((size, cap), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn triangle_labels() {
        let sg = extract(&triangle(true), Triple::new(0, 0, 1), &ExtractionConfig::default())
            .unwrap();
        let labels = double_radius_label(&sg);
        // without the query edge u and v are two hops apart through a
        assert_eq!(labels[0], NodeLabel { dist_u: Some(0), dist_v: Some(2) });
        assert_eq!(labels[1], NodeLabel { dist_u: Some(2), dist_v: Some(0) });
        assert_eq!(labels[2], NodeLabel { dist_u: Some(1), dist_v: Some(1) });
    }

    #[test]
    fn unreachable_label_is_none() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 2)], 3, 1, true).unwrap();
        let cfg = ExtractionConfig {
            hops: 2,
            scope: Scope::Unclosing,
            max_nodes: None,
        };
        let sg = extract(&g, Triple::new(0, 0, 1), &cfg).unwrap();
        let labels = double_radius_label(&sg);
        assert_eq!(labels[1].dist_u, None);
        assert_eq!(labels[0].dist_v, None);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn graph_strategy() -> impl Strategy<Value = (usize, Vec<Triple>)> {
        (2usize..40).prop_flat_map(|n| {
            let triple = (0..n, 0usize..3, 0..n).prop_map(|(h, r, t)| Triple::new(h, r, t));
            (Just(n), prop::collection::vec(triple, 0..80))
        })
    }

    fn naive_distances(n: usize, triples: &[Triple], src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; n];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(x) = queue.pop_front() {
            for t in triples {
                let next = if t.head == x {
                    t.tail
                } else if t.tail == x {
                    t.head
                } else {
                    continue;
                };
                if dist[next].is_none() {
                    dist[next] = Some(dist[x].unwrap() + 1);
                    queue.push_back(next);
                }
            }
        }
        dist
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn khop_matches_plain_bfs((n, triples) in graph_strategy(), node in 0usize..40, k in 0usize..4) {
            let node = node % n;
            let g = KnowledgeGraph::build(&triples, n, 3, true).unwrap();
            let dist = naive_distances(n, &triples, node);
            let expected: Vec<usize> = (0..n).filter(|&x| dist[x].is_some_and(|d| d <= k)).collect();
            prop_assert_eq!(khop_neighbors(&g, node, k).unwrap(), expected);
        }

        #[test]
        fn enclosing_nodes_lie_inside_unclosing((n, triples) in graph_strategy(), pick in 0usize..1000, hops in 1usize..4) {
            prop_assume!(!triples.is_empty());
            let q = triples[pick % triples.len()];
            prop_assume!(q.head != q.tail);
            let g = KnowledgeGraph::build(&triples, n, 3, true).unwrap();
            let cfg = |scope| ExtractionConfig { hops, scope, max_nodes: None };
            let enc = extract(&g, q, &cfg(Scope::Enclosing)).unwrap();
            let unc = extract(&g, q, &cfg(Scope::Unclosing)).unwrap();
            let enc_nodes: BTreeSet<_> = enc.global_ids().iter().copied().collect();
            let unc_nodes: BTreeSet<_> = unc.global_ids().iter().copied().collect();
            prop_assert!(enc_nodes.is_subset(&unc_nodes));
            prop_assert!(enc.num_edges() <= unc.num_edges());
            let ids = enc.global_ids();
            let copies = enc.edges().iter().filter(|e| (ids[e.src], e.rel, ids[e.dst]) == (q.head, q.rel, q.tail)).count();
            prop_assert_eq!(copies, 1);
        }
    }
}
