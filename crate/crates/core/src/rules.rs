//! Rule bodies scored as cycles through a synthetic query edge.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{RelationId, RelationVocab};
use crate::model::{score, ModelParams};
use crate::subgraph::Subgraph;

pub const MAX_BODY_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RuleCandidate {
    pub head_rel: RelationId,
    /// Relations along the chain from the query's tail back to its head.
    pub body: Vec<RelationId>,
    pub score: f64,
}

impl RuleCandidate {
    pub fn body_names(&self, vocab: &RelationVocab) -> String {
        self.body
            .iter()
            .map(|&r| vocab.display(r))
            .collect::<Vec<_>>()
            .join(" -> ")
    }
}

/// Query edge `u -head-> v` closed by the chain `v -b0-> n1 -b1-> ... -> u`
/// on fresh nodes.
pub fn build_rule_subgraph(head_rel: RelationId, body: &[RelationId]) -> Result<Subgraph> {
    if body.is_empty() || body.len() > MAX_BODY_LEN {
        return Err(Error::Config(format!(
            "rule body length {} outside 1..={MAX_BODY_LEN}",
            body.len()
        )));
    }
    let n = body.len() + 1;
    // node 0 is u, node 1 is v, chain nodes follow
    let chain: Vec<usize> = std::iter::once(1).chain(2..n).chain(std::iter::once(0)).collect();
    let edges: Vec<(usize, RelationId, usize)> = body
        .iter()
        .enumerate()
        .map(|(i, &r)| (chain[i], r, chain[i + 1]))
        .collect();
    Subgraph::from_edges(n, (0, head_rel, 1), &edges)
}

/// Every body of length `1..=max_len` over `relations` ids, in lexicographic order.
pub fn enumerate_bodies(relations: usize, max_len: usize) -> Vec<Vec<RelationId>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(max_len);
    fn walk(relations: usize, max_len: usize, cur: &mut Vec<RelationId>, out: &mut Vec<Vec<RelationId>>) {
        for r in 0..relations {
            cur.push(r);
            out.push(cur.clone());
            if cur.len() < max_len {
                walk(relations, max_len, cur, out);
            }
            cur.pop();
        }
    }
    walk(relations, max_len, &mut cur, &mut out);
    out
}

/// Score every body over the model's relation ids and return the `top_k`
/// best, highest score first; equal scores keep lexicographic body order.
pub fn score_rules(params: &ModelParams, head_rel: RelationId, max_body_len: usize, top_k: usize) -> Result<Vec<RuleCandidate>> {
    let relations = params.relations();
    if head_rel >= relations {
        return Err(Error::Config(format!(
            "head relation {head_rel} outside the model's {relations} relations"
        )));
    }
    if max_body_len == 0 || max_body_len > MAX_BODY_LEN {
        return Err(Error::Config(format!(
            "max body length {max_body_len} outside 1..={MAX_BODY_LEN}"
        )));
    }
    let bodies = enumerate_bodies(relations, max_body_len);
    let mut scored = bodies
        .into_par_iter()
        .map(|body| {
            let sg = build_rule_subgraph(head_rel, &body)?;
            Ok(RuleCandidate {
                head_rel,
                score: score(&sg, params)?,
                body,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // stable sort keeps the lexicographic enumeration order among ties
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(top_k);
    Ok(scored)
}
