//! Exact checks of what single-source edge-wise message passing computes.
//!
//! [`semiring_forward`] runs the operator form of the message / aggregate /
//! update recursion over any [`Semiring`]. Instantiated with integer
//! polynomials it exposes every monomial the recursion produces, which can
//! then be compared with the monomials obtained by enumerating closed walks
//! through the query edge.

pub mod polynomial;
pub mod semiring;
pub mod walks;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subgraph::Subgraph;

pub use polynomial::{Monomial, Polynomial};
pub use semiring::{Counting, MaxPlus, PolynomialSemiring, Semiring, SemiringSpec, Tropical};
pub use walks::{enumerate_closed_walks, ClosedWalk, DEFAULT_WALK_CAP};

/// Which edges carry a nonzero feature before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Only the query edge.
    SingleSource,
    /// Every edge, from its own relation.
    Full,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_source" => Ok(InitMode::SingleSource),
            "full" => Ok(InitMode::Full),
            other => Err(Error::Config(format!("unknown init mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::SingleSource => "single_source",
            InitMode::Full => "full",
        })
    }
}

/// Run `layers` rounds of
///
/// ```text
/// m_e   = (h_src ⊗ r_e) ⊕ (e ⊗ r_e)
/// h_n   = ⊕ { m_e : dst(e) = n }         (fresh each round; empty ⊕ is zero)
/// e     = h_src ⊕ e
/// ```
///
/// and return the final feature of the query edge. `rel_values[r]` is the
/// carrier value of relation `r`.
pub fn semiring_forward<S: Semiring>(
    sg: &Subgraph,
    layers: usize,
    semiring: &S,
    rel_values: &[S::Elem],
    init: InitMode,
) -> Result<S::Elem> {
    if layers == 0 {
        return Err(Error::Config("at least one layer is required".into()));
    }
    if let Some(max) = sg.max_relation() {
        if max >= rel_values.len() {
            return Err(Error::Config(format!(
                "no carrier value for relation {max} ({} supplied)",
                rel_values.len()
            )));
        }
    }
    let zero = semiring.zero();
    let edges = sg.edges();
    let q = sg.query_edge();

    let mut e: Vec<S::Elem> = edges
        .iter()
        .enumerate()
        .map(|(i, edge)| match init {
            InitMode::Full => rel_values[edge.rel].clone(),
            InitMode::SingleSource if i == q => rel_values[edge.rel].clone(),
            InitMode::SingleSource => zero.clone(),
        })
        .collect();
    let mut h = vec![zero.clone(); sg.num_nodes()];

    for _ in 0..layers {
        let mut next_h = vec![zero.clone(); sg.num_nodes()];
        for (i, edge) in edges.iter().enumerate() {
            let r = &rel_values[edge.rel];
            let msg = semiring.plus(&semiring.times(&h[edge.src], r), &semiring.times(&e[i], r));
            next_h[edge.dst] = semiring.plus(&next_h[edge.dst], &msg);
        }
        h = next_h;
        for (i, edge) in edges.iter().enumerate() {
            e[i] = semiring.plus(&h[edge.src], &e[i]);
        }
    }
    Ok(e.swap_remove(q))
}

/// One indeterminate per relation id present in the subgraph.
pub fn relation_indeterminates(sg: &Subgraph) -> Vec<Polynomial> {
    let n = sg.max_relation().map_or(0, |m| m + 1);
    (0..n).map(Polynomial::var).collect()
}

/// Monomials predicted by closed-walk enumeration: the bare seed `r_t`, and
/// for each closed walk of length at most `layers`, `r_t` times the
/// relations of all its edges.
pub fn rule_induced_support(sg: &Subgraph, layers: usize) -> Result<BTreeSet<Monomial>> {
    let (_, r_t, _) = sg.query();
    let mut support = BTreeSet::from([Monomial::var(r_t)]);
    for walk in enumerate_closed_walks(sg, layers, DEFAULT_WALK_CAP)? {
        support.insert(walk.monomial(sg));
    }
    Ok(support)
}

#[derive(Debug, Clone)]
pub struct SupportReport {
    pub polynomial: Polynomial,
    pub gnn_support: BTreeSet<Monomial>,
    pub oracle_support: BTreeSet<Monomial>,
    pub matched: bool,
    /// First monomial (in order) present in exactly one of the two supports.
    pub witness: Option<Monomial>,
    pub coefficients_positive: bool,
}

impl SupportReport {
    /// Monomials the recursion produced beyond the oracle.
    pub fn extra(&self) -> BTreeSet<Monomial> {
        self.gnn_support
            .difference(&self.oracle_support)
            .cloned()
            .collect()
    }

    /// Support equality with strictly positive integer coefficients.
    pub fn passed(&self) -> bool {
        self.matched && self.coefficients_positive
    }
}

/// Polynomial forward under `init`, compared with the closed-walk oracle.
pub fn verify_support(sg: &Subgraph, layers: usize, init: InitMode) -> Result<SupportReport> {
    let vars = relation_indeterminates(sg);
    let polynomial = semiring_forward(sg, layers, &PolynomialSemiring, &vars, init)?;
    let gnn_support = polynomial.support();
    let oracle_support = rule_induced_support(sg, layers)?;
    let witness = gnn_support
        .symmetric_difference(&oracle_support)
        .next()
        .cloned();
    Ok(SupportReport {
        coefficients_positive: polynomial.all_coefficients_positive(),
        matched: witness.is_none(),
        polynomial,
        gnn_support,
        oracle_support,
        witness,
    })
}

/// Single-source polynomial forward against the closed-walk oracle.
pub fn verify_rule_support(sg: &Subgraph, layers: usize) -> Result<SupportReport> {
    verify_support(sg, layers, InitMode::SingleSource)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdempotentReport<T> {
    pub forward: T,
    pub oracle: T,
    pub matched: bool,
}

/// Brute-force best-walk value for an idempotent semiring:
/// `seed ⊕ ⨁_w (seed ⊗ ⨂_{e∈w} value(rel e))`.
pub fn best_walk_oracle<S: Semiring>(
    sg: &Subgraph,
    layers: usize,
    semiring: &S,
    rel_values: &[S::Elem],
) -> Result<S::Elem> {
    let (_, r_t, _) = sg.query();
    let seed = rel_values
        .get(r_t)
        .ok_or_else(|| Error::Config(format!("no carrier value for relation {r_t}")))?
        .clone();
    let mut best = seed.clone();
    for walk in enumerate_closed_walks(sg, layers, DEFAULT_WALK_CAP)? {
        let mut term = seed.clone();
        for &e in &walk.edges {
            let rel = sg.edges()[e].rel;
            let value = rel_values
                .get(rel)
                .ok_or_else(|| Error::Config(format!("no carrier value for relation {rel}")))?;
            term = semiring.times(&term, value);
        }
        best = semiring.plus(&best, &term);
    }
    Ok(best)
}

/// Forward over an idempotent semiring against brute-force walk enumeration.
/// The semiring is first checked on `samples` (plus the relation values) for
/// `0 ⊕ a = a`, `0 ⊗ a = 0` and `a ⊕ a = a`.
pub fn verify_idempotent<S: Semiring>(
    sg: &Subgraph,
    layers: usize,
    semiring: &S,
    rel_values: &[S::Elem],
    samples: &[S::Elem],
) -> Result<IdempotentReport<S::Elem>> {
    let mut all: Vec<S::Elem> = samples.to_vec();
    all.extend(rel_values.iter().cloned());
    semiring.check_identities(&all)?;
    semiring.check_idempotent(&all)?;
    let forward = semiring_forward(sg, layers, semiring, rel_values, InitMode::SingleSource)?;
    let oracle = best_walk_oracle(sg, layers, semiring, rel_values)?;
    Ok(IdempotentReport {
        matched: forward == oracle,
        forward,
        oracle,
    })
}

/// Tropical instantiation with integer relation weights.
pub fn verify_tropical(sg: &Subgraph, layers: usize, weights: &[i64]) -> Result<IdempotentReport<Tropical>> {
    let values: Vec<Tropical> = weights.iter().map(|&w| Tropical::Fin(w)).collect();
    let samples = [Tropical::Fin(0), Tropical::Fin(-3), Tropical::Fin(11)];
    verify_idempotent(sg, layers, &MaxPlus, &values, &samples)
}

/// Bounds for random verification instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceBounds {
    pub max_nodes: usize,
    pub max_edges: usize,
    pub max_relations: usize,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        InstanceBounds {
            max_nodes: 8,
            max_edges: 20,
            max_relations: 4,
        }
    }
}

/// Random subgraph with `2..=max_nodes` nodes, up to `max_edges` edges in
/// total (query included) and relation ids below `max_relations`. Query is
/// `(0, r_t, 1)`; no other edge repeats the query triple. Self-loops and
/// parallel edges are allowed.
pub fn random_instance(seed: u64, bounds: &InstanceBounds) -> Result<Subgraph> {
    if bounds.max_nodes < 2 || bounds.max_edges < 1 || bounds.max_relations < 1 {
        return Err(Error::Config(
            "instances need at least 2 nodes, 1 edge and 1 relation".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=bounds.max_nodes);
    let rels = rng.gen_range(1..=bounds.max_relations);
    let r_t = rng.gen_range(0..rels);
    let m = rng.gen_range(0..bounds.max_edges);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let e = (rng.gen_range(0..n), rng.gen_range(0..rels), rng.gen_range(0..n));
        if e != (0, r_t, 1) {
            edges.push(e);
        }
    }
    Subgraph::from_edges(n, (0, r_t, 1), &edges)
}

/// Random integer weights for tropical checks, one per relation id.
pub fn random_weights(seed: u64, count: usize) -> Vec<i64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count).map(|_| rng.gen_range(-9..=9)).collect()
}


#[cfg(test)]
mod props {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn bounds() -> InstanceBounds {
        InstanceBounds {
            max_nodes: 6,
            max_edges: 12,
            max_relations: 3,
        }
    }

    fn support(sg: &Subgraph, layers: usize) -> BTreeSet<Monomial> {
        semiring_forward(sg, layers, &PolynomialSemiring, &relation_indeterminates(sg), InitMode::SingleSource)
            .unwrap()
            .support()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn support_grows_with_layers(seed in any::<u64>(), k in 1usize..4) {
            let sg = random_instance(seed, &bounds()).unwrap();
            let shallow = support(&sg, k);
            let deep = support(&sg, k + 1);
            prop_assert!(shallow.is_subset(&deep));
            prop_assert_eq!(deep, rule_induced_support(&sg, k + 1).unwrap());
        }

        #[test]
        fn counting_forward_ignores_labels_and_order(seed in any::<u64>(), shuffle in any::<u64>(), k in 1usize..4) {
            let sg = random_instance(seed, &bounds()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
            let mut node_perm: Vec<usize> = (0..sg.num_nodes()).collect();
            node_perm.shuffle(&mut rng);
            let mut edge_order: Vec<usize> = (0..sg.num_edges()).collect();
            edge_order.shuffle(&mut rng);
            let moved = sg.permuted(&node_perm, &edge_order);
            let weights: Vec<BigInt> = (2..6).map(BigInt::from).collect();
            let a = semiring_forward(&sg, k, &Counting, &weights, InitMode::SingleSource).unwrap();
            let b = semiring_forward(&moved, k, &Counting, &weights, InitMode::SingleSource).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn disconnected_edges_leave_polynomial_unchanged(
            seed in any::<u64>(),
            k in 1usize..4,
            extra in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 1..6),
        ) {
            let sg = random_instance(seed, &bounds()).unwrap();
            let base = sg.num_nodes();
            let edges: Vec<_> = extra.iter().map(|&(s, r, d)| (base + s, r, base + d)).collect();
            let grown = sg.with_extra_edges(3, &edges);
            let vals = relation_indeterminates(&grown);
            let a = semiring_forward(&sg, k, &PolynomialSemiring, &vals, InitMode::SingleSource).unwrap();
            let b = semiring_forward(&grown, k, &PolynomialSemiring, &vals, InitMode::SingleSource).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
