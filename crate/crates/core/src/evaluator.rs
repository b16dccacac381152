//! Filtered ranking against sampled corruptions.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::model::{score, ModelParams};
use crate::subgraph::{extract, ExtractionConfig};

/// Anything that can assign a plausibility score to a triple in the context of a graph.
pub trait TripleScorer: Sync {
    fn score_triple(&self, graph: &KnowledgeGraph, triple: Triple) -> Result<f64>;
}

/// Extracts the query subgraph and runs the trained model on it.
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
    pub extraction: ExtractionConfig,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let cfg = params.config();
        ModelScorer {
            params,
            extraction: ExtractionConfig {
                hops: cfg.hops,
                scope: cfg.scope,
                max_nodes: None,
            },
        }
    }
}

impl TripleScorer for ModelScorer<'_> {
    fn score_triple(&self, graph: &KnowledgeGraph, triple: Triple) -> Result<f64> {
        let sg = extract(graph, triple, &self.extraction)?;
        score(&sg, self.params)
    }
}

/// Scores 1 for triples in a known set and 0 otherwise.
pub struct OracleScorer {
    pub truth: HashSet<Triple>,
}

impl TripleScorer for OracleScorer {
    fn score_triple(&self, _: &KnowledgeGraph, triple: Triple) -> Result<f64> {
        Ok(if self.truth.contains(&triple) { 1.0 } else { 0.0 })
    }
}

/// Uniform pseudo-random score, a fixed function of the triple and seed.
pub struct RandomScorer {
    pub seed: u64,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream seed from a base seed and a tuple of indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

impl TripleScorer for RandomScorer {
    fn score_triple(&self, _: &KnowledgeGraph, t: Triple) -> Result<f64> {
        let h = derive_seed(self.seed, &[t.head as u64, t.rel as u64, t.tail as u64]);
        Ok((h >> 11) as f64 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sides {
    Tail,
    Head,
    Both,
}

impl FromStr for Sides {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail" => Ok(Sides::Tail),
            "head" => Ok(Sides::Head),
            "both" => Ok(Sides::Both),
            other => Err(Error::Config(format!("unknown ranking side {other:?}"))),
        }
    }
}

impl fmt::Display for Sides {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sides::Tail => "tail",
            Sides::Head => "head",
            Sides::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

impl Sides {
    pub fn list(self) -> &'static [Side] {
        match self {
            Sides::Tail => &[Side::Tail],
            Sides::Head => &[Side::Head],
            Sides::Both => &[Side::Head, Side::Tail],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub num_negatives: usize,
    pub filtered: bool,
    pub seed: u64,
    pub sides: Sides,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            num_negatives: 50,
            filtered: true,
            seed: 0,
            sides: Sides::Both,
        }
    }
}

impl RankingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_negatives == 0 {
            return Err(Error::Config("num_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr: f64,
    /// Number of rankings (one per triple and side).
    pub count: usize,
    /// Test triples skipped because head equals tail.
    pub skipped: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[usize], skipped: usize) -> Self {
        let n = ranks.len().max(1) as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            hits1: hits(1),
            hits5: hits(5),
            hits10: hits(10),
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            count: ranks.len(),
            skipped,
        }
    }
}

/// Expected rank under random tie-breaking:
/// `1 + #greater + ceil(#equal / 2)`.
pub fn rank_from_scores(positive: f64, negatives: &[f64]) -> usize {
    let greater = negatives.iter().filter(|&&s| s > positive).count();
    let ties = negatives.iter().filter(|&&s| s == positive).count();
    1 + greater + ties.div_ceil(2)
}

fn corrupt(t: Triple, side: Side, entity: usize) -> Triple {
    match side {
        Side::Head => Triple::new(entity, t.rel, t.tail),
        Side::Tail => Triple::new(t.head, t.rel, entity),
    }
}

/// Corruptions of one side of `positive`, drawn uniformly from the valid
/// candidates (distinct when enough exist, with repetition otherwise).
/// Candidates never equal the positive, never form a self-loop and, when
/// `known` is given, are never known true triples.
pub fn sample_corruptions<R: Rng>(
    entity_count: usize,
    known: Option<&HashSet<Triple>>,
    positive: Triple,
    side: Side,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    let pool: Vec<Triple> = (0..entity_count)
        .map(|e| corrupt(positive, side, e))
        .filter(|c| *c != positive && c.head != c.tail)
        .filter(|c| known.is_none_or(|k| !k.contains(c)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Sampling(format!(
            "no valid {side:?} corruption of {positive:?}"
        )));
    }
    if pool.len() >= n {
        Ok(sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect())
    } else {
        Ok((0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect())
    }
}

/// Rank `positive` among `negatives`. With filtering on, a negative that
/// is a known true triple is a protocol error.
pub fn rank_triple<S: TripleScorer + ?Sized>(
    scorer: &S,
    graph: &KnowledgeGraph,
    positive: Triple,
    negatives: &[Triple],
    known: Option<&HashSet<Triple>>,
) -> Result<usize> {
    if let Some(k) = known {
        if let Some(bad) = negatives.iter().find(|t| k.contains(t)) {
            return Err(Error::Protocol(format!("negative {bad:?} is a known triple")));
        }
    }
    let pos = scorer.score_triple(graph, positive)?;
    let negs = negatives
        .iter()
        .map(|&t| scorer.score_triple(graph, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_from_scores(pos, &negs))
}

/// Rank every triple against `num_negatives` corruptions per configured
/// side. Triples run in parallel on the current rayon pool; every triple
/// draws negatives from its own seeded stream so results do not depend on
/// the worker count.
pub fn evaluate<S: TripleScorer + ?Sized>(
    scorer: &S,
    graph: &KnowledgeGraph,
    triples: &[Triple],
    known: &HashSet<Triple>,
    cfg: &RankingConfig,
) -> Result<Metrics> {
    cfg.validate()?;
    let filter = cfg.filtered.then_some(known);
    let per_triple: Vec<Result<Option<Vec<usize>>>> = triples
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            if t.head == t.tail {
                return Ok(None);
            }
            let mut ranks = Vec::with_capacity(2);
            for (s, &side) in cfg.sides.list().iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[i as u64, s as u64]));
                let negs = sample_corruptions(graph.entity_count(), filter, t, side, cfg.num_negatives, &mut rng)?;
                ranks.push(rank_triple(scorer, graph, t, &negs, filter)?);
            }
            Ok(Some(ranks))
        })
        .collect();
    let mut ranks = Vec::with_capacity(triples.len() * 2);
    let mut skipped = 0;
    for r in per_triple {
        match r? {
            Some(rs) => ranks.extend(rs),
            None => skipped += 1,
        }
    }
    if ranks.is_empty() {
        return Err(Error::Protocol("nothing to rank".into()));
    }
    Ok(Metrics::from_ranks(&ranks, skipped))
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tie_rule_rank(pos in -3i32..3, negs in prop::collection::vec(-3i32..3, 0..60)) {
            let negatives: Vec<f64> = negs.iter().map(|&x| x as f64).collect();
            let rank = rank_from_scores(pos as f64, &negatives);
            let above = negs.iter().filter(|&&x| x > pos).count();
            let equal = negs.iter().filter(|&&x| x == pos).count();
            prop_assert_eq!(rank, 1 + above + (equal + 1) / 2);
            prop_assert!(rank >= 1 && rank <= negatives.len() + 1);
        }
    }
}
