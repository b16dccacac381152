//! Knowledge-graph storage: triple files, vocabularies, the inverse-augmented
//! directed multigraph and train/valid/test dataset bundles.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }
}

/// Name <-> dense id table, ids handed out in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for name in names {
            vocab.intern(&name.into());
        }
        vocab
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Relation names plus the inverse-id convention: the inverse of base
/// relation `r` is `r + base_count`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationVocab {
    base: Vocab,
}

/// Suffix used when rendering inverse relation ids.
pub const INVERSE_SUFFIX: &str = "^-1";

impl RelationVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RelationVocab {
            base: Vocab::from_names(names),
        }
    }

    pub fn intern(&mut self, name: &str) -> RelationId {
        self.base.intern(name)
    }

    pub fn get(&self, name: &str) -> Option<RelationId> {
        if let Some(id) = self.base.get(name) {
            return Some(id);
        }
        name.strip_suffix(INVERSE_SUFFIX)
            .and_then(|base| self.base.get(base))
            .map(|id| id + self.base_count())
    }

    pub fn base_count(&self) -> usize {
        self.base.len()
    }

    /// Number of ids once inverses are materialized.
    pub fn augmented_count(&self) -> usize {
        2 * self.base_count()
    }

    pub fn inverse(&self, rel: RelationId) -> RelationId {
        inverse_relation(rel, self.base_count())
    }

    pub fn names(&self) -> &[String] {
        self.base.names()
    }

    /// Display name for any augmented id; inverses carry [`INVERSE_SUFFIX`].
    pub fn display(&self, rel: RelationId) -> String {
        let base = self.base_count();
        if rel < base {
            self.base.names[rel].clone()
        } else if rel < 2 * base {
            format!("{}{}", self.base.names[rel - base], INVERSE_SUFFIX)
        } else {
            format!("<rel {rel}>")
        }
    }
}

/// Inverse-id map on `0..2*base_count`. It is an involution.
pub fn inverse_relation(rel: RelationId, base_count: usize) -> RelationId {
    if rel < base_count {
        rel + base_count
    } else {
        rel - base_count
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parse triple lines from any reader. `origin` is only used in error messages.
pub fn parse_triples<R: BufRead>(
    reader: R,
    origin: &Path,
    entities: &mut Vocab,
    relations: &mut RelationVocab,
) -> Result<Vec<Triple>> {
    let mut triples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let head = entities.intern(fields[0]);
        let rel = relations.intern(fields[1]);
        let tail = entities.intern(fields[2]);
        triples.push(Triple { head, rel, tail });
    }
    Ok(triples)
}

pub fn load_triples(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut RelationVocab,
) -> Result<Vec<Triple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triples(BufReader::new(file), path, entities, relations)
}

/// Write base triples back out as `head<TAB>rel<TAB>tail` lines.
pub fn write_triples<W: Write>(
    out: &mut W,
    triples: &[Triple],
    entities: &Vocab,
    relations: &RelationVocab,
) -> std::io::Result<()> {
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            entities.name(t.head).unwrap_or("?"),
            relations.display(t.rel),
            entities.name(t.tail).unwrap_or("?")
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdjEntry {
    pub rel: RelationId,
    /// The other endpoint: tail for `out_adj`, head for `in_adj`.
    pub node: EntityId,
    pub edge: usize,
}

/// Immutable directed multigraph over dense entity ids.
///
/// With inverse augmentation the first `base_triple_count` edges are the
/// input triples in input order and edge `i + base_triple_count` is the
/// inverse companion of edge `i`.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entity_count: usize,
    base_relations: usize,
    base_triple_count: usize,
    inverses: bool,
    edges: Vec<Triple>,
    out_adj: Vec<Vec<AdjEntry>>,
    in_adj: Vec<Vec<AdjEntry>>,
    edge_set: HashSet<Triple>,
}

impl KnowledgeGraph {
    pub fn build(
        triples: &[Triple],
        entity_count: usize,
        base_relations: usize,
        add_inverses: bool,
    ) -> Result<Self> {
        for (i, t) in triples.iter().enumerate() {
            if t.head >= entity_count || t.tail >= entity_count {
                return Err(Error::Construction(format!(
                    "triple {i} references entity outside 0..{entity_count}"
                )));
            }
            if t.rel >= base_relations {
                return Err(Error::Construction(format!(
                    "triple {i} has relation {} outside 0..{base_relations}",
                    t.rel
                )));
            }
        }

        let mut edges = triples.to_vec();
        if add_inverses {
            edges.extend(
                triples
                    .iter()
                    .map(|t| Triple::new(t.tail, t.rel + base_relations, t.head)),
            );
        }

        let mut out_adj = vec![Vec::new(); entity_count];
        let mut in_adj = vec![Vec::new(); entity_count];
        for (edge, t) in edges.iter().enumerate() {
            out_adj[t.head].push(AdjEntry {
                rel: t.rel,
                node: t.tail,
                edge,
            });
            in_adj[t.tail].push(AdjEntry {
                rel: t.rel,
                node: t.head,
                edge,
            });
        }
        let edge_set = edges.iter().copied().collect();

        Ok(KnowledgeGraph {
            entity_count,
            base_relations,
            base_triple_count: triples.len(),
            inverses: add_inverses,
            edges,
            out_adj,
            in_adj,
            edge_set,
        })
    }

    pub fn entity_count(&self) -> usize {
        self.entity_count
    }

    pub fn base_relations(&self) -> usize {
        self.base_relations
    }

    /// Relation ids in use: doubled when inverses are materialized.
    pub fn relation_count(&self) -> usize {
        if self.inverses {
            2 * self.base_relations
        } else {
            self.base_relations
        }
    }

    pub fn has_inverses(&self) -> bool {
        self.inverses
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> Triple {
        self.edges[index]
    }

    /// The original (non-inverse) triples.
    pub fn base_triples(&self) -> &[Triple] {
        &self.edges[..self.base_triple_count]
    }

    pub fn out_adj(&self, node: EntityId) -> &[AdjEntry] {
        &self.out_adj[node]
    }

    pub fn in_adj(&self, node: EntityId) -> &[AdjEntry] {
        &self.in_adj[node]
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.edge_set.contains(triple)
    }

    pub fn inverse_relation(&self, rel: RelationId) -> RelationId {
        inverse_relation(rel, self.base_relations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Transductive,
    Inductive,
}

impl std::str::FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transductive" => Ok(DatasetMode::Transductive),
            "inductive" => Ok(DatasetMode::Inductive),
            other => Err(Error::Config(format!("unknown dataset mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub mode: DatasetMode,
    pub add_inverses: bool,
    /// Fraction of `train.txt` held out as test links in transductive mode.
    pub holdout_fraction: f64,
    pub split_seed: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            mode: DatasetMode::Inductive,
            add_inverses: true,
            holdout_fraction: 0.1,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub mode: DatasetMode,
    pub relations: RelationVocab,
    pub train_entities: Vocab,
    pub train_graph: KnowledgeGraph,
    pub valid_triples: Vec<Triple>,
    /// Entity namespace of the inference graph; `None` in transductive mode.
    pub test_entities: Option<Vocab>,
    test_graph: Option<KnowledgeGraph>,
    pub test_triples: Vec<Triple>,
}

impl DatasetBundle {
    pub fn new(
        mode: DatasetMode,
        relations: RelationVocab,
        train_entities: Vocab,
        train_graph: KnowledgeGraph,
        valid_triples: Vec<Triple>,
        test: Option<(Vocab, KnowledgeGraph)>,
        test_triples: Vec<Triple>,
    ) -> Self {
        let (test_entities, test_graph) = match test {
            Some((v, g)) => (Some(v), Some(g)),
            None => (None, None),
        };
        DatasetBundle {
            mode,
            relations,
            train_entities,
            train_graph,
            valid_triples,
            test_entities,
            test_graph,
            test_triples,
        }
    }

    /// Graph used for message passing at test time. In transductive mode
    /// this is the training graph.
    pub fn test_graph(&self) -> &KnowledgeGraph {
        self.test_graph.as_ref().unwrap_or(&self.train_graph)
    }

    pub fn test_entity_vocab(&self) -> &Vocab {
        self.test_entities.as_ref().unwrap_or(&self.train_entities)
    }

    /// Every triple known to be true in the test namespace, for filtering.
    pub fn test_known(&self) -> HashSet<Triple> {
        let mut known: HashSet<Triple> = self.test_graph().edges().iter().copied().collect();
        known.extend(self.test_triples.iter().copied());
        if self.mode == DatasetMode::Transductive {
            known.extend(self.valid_triples.iter().copied());
        }
        known
    }

    /// Every triple known to be true in the training namespace.
    pub fn train_known(&self) -> HashSet<Triple> {
        let mut known: HashSet<Triple> = self.train_graph.edges().iter().copied().collect();
        known.extend(self.valid_triples.iter().copied());
        if self.mode == DatasetMode::Transductive {
            known.extend(self.test_triples.iter().copied());
        }
        known
    }
}

/// Seeded uniform hold-out: returns `(kept, held_out)` with
/// `round(fraction * n)` triples held out. Both halves keep input order.
pub fn holdout_split(triples: &[Triple], fraction: f64, seed: u64) -> (Vec<Triple>, Vec<Triple>) {
    let n = triples.len();
    let count = ((n as f64) * fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut held = vec![false; n];
    for &i in order.iter().take(count.min(n)) {
        held[i] = true;
    }
    let mut kept = Vec::with_capacity(n - count);
    let mut out = Vec::with_capacity(count);
    for (i, t) in triples.iter().enumerate() {
        if held[i] {
            out.push(*t);
        } else {
            kept.push(*t);
        }
    }
    (kept, out)
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingFile(path))
    }
}

fn load_optional(
    dir: &Path,
    name: &str,
    entities: &mut Vocab,
    relations: &mut RelationVocab,
) -> Result<Vec<Triple>> {
    let path = dir.join(name);
    if path.is_file() {
        load_triples(&path, entities, relations)
    } else {
        Ok(Vec::new())
    }
}

/// Load a benchmark directory.
///
/// Transductive: `train.txt` (required) and `valid.txt` (optional); test
/// links are a seeded hold-out of `train.txt`. Inductive additionally
/// requires `train_ind.txt` and `test_ind.txt`, which live in their own
/// entity namespace but share the relation vocabulary.
pub fn load_dataset(dir: &Path, opts: &LoadOptions) -> Result<DatasetBundle> {
    let train_path = require(dir, "train.txt")?;
    let (ind_train_path, ind_test_path) = match opts.mode {
        DatasetMode::Inductive => (
            Some(require(dir, "train_ind.txt")?),
            Some(require(dir, "test_ind.txt")?),
        ),
        DatasetMode::Transductive => (None, None),
    };

    let mut relations = RelationVocab::new();
    let mut train_entities = Vocab::new();
    let train_all = load_triples(&train_path, &mut train_entities, &mut relations)?;
    let seen = relations.base_count();

    let valid = load_optional(dir, "valid.txt", &mut train_entities, &mut relations)?;

    let mut test_ns = None;
    if let (Some(tr), Some(te)) = (&ind_train_path, &ind_test_path) {
        let mut entities = Vocab::new();
        let graph_triples = load_triples(tr, &mut entities, &mut relations)?;
        let test_triples = load_triples(te, &mut entities, &mut relations)?;
        test_ns = Some((entities, graph_triples, test_triples));
    }

    if relations.base_count() > seen {
        let unseen = relations.names()[seen..].to_vec();
        return Err(Error::UnseenRelations(unseen));
    }
    let base = relations.base_count();

    let (train_triples, held_out) = match opts.mode {
        DatasetMode::Transductive => {
            holdout_split(&train_all, opts.holdout_fraction, opts.split_seed)
        }
        DatasetMode::Inductive => (train_all, Vec::new()),
    };
    let train_graph = KnowledgeGraph::build(
        &train_triples,
        train_entities.len(),
        base,
        opts.add_inverses,
    )?;

    Ok(match test_ns {
        Some((entities, graph_triples, test_triples)) => {
            let graph =
                KnowledgeGraph::build(&graph_triples, entities.len(), base, opts.add_inverses)?;
            DatasetBundle::new(
                DatasetMode::Inductive,
                relations,
                train_entities,
                train_graph,
                valid,
                Some((entities, graph)),
                test_triples,
            )
        }
        None => DatasetBundle::new(
            DatasetMode::Transductive,
            relations,
            train_entities,
            train_graph,
            valid,
            None,
            held_out,
        ),
    })
}
