//! Generated datasets: a planted composition rule and a random graph of
//! benchmark-like density.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{holdout_split, write_triples, KnowledgeGraph, RelationVocab, Triple, Vocab};

/// Relation ids of the composition dataset.
pub const R_FIRST: usize = 0;
pub const R_SECOND: usize = 1;
pub const R_COMPOSED: usize = 2;
pub const R_NOISE: usize = 3;
pub const COMPOSITION_RELATIONS: [&str; 4] = ["r1", "r2", "r3", "r4"];

#[derive(Debug, Clone, Copy)]
pub struct CompositionConfig {
    /// Entities per namespace (training and inductive each get this many).
    pub entities: usize,
    /// Distinct `r1` edges and distinct `r2` edges per namespace.
    pub chain_edges: usize,
    /// Distinct `r4` edges per namespace, unrelated to the rule.
    pub noise_edges: usize,
    /// Fraction of training-namespace `r3` facts moved to `valid.txt`.
    pub valid_fraction: f64,
    /// Fraction of inductive-namespace `r3` facts moved to `test_ind.txt`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            entities: 60,
            chain_edges: 70,
            noise_edges: 30,
            valid_fraction: 0.15,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Triples of one namespace: every `r3(x, z)` holds exactly when some `y`
/// has `r1(x, y)` and `r2(y, z)`.
pub fn composition_graph(entities: usize, chain_edges: usize, noise_edges: usize, rng: &mut impl Rng) -> Result<Vec<Triple>> {
    let max_pairs = entities * entities.saturating_sub(1);
    if entities < 3 || chain_edges > max_pairs || noise_edges > max_pairs {
        return Err(Error::Config(format!(
            "cannot place {chain_edges} chain and {noise_edges} noise edges on {entities} entities"
        )));
    }
    let pairs = |count: usize, rng: &mut dyn rand::RngCore| -> HashSet<(usize, usize)> {
        let mut set = HashSet::with_capacity(count);
        while set.len() < count {
            let a = rng.gen_range(0..entities);
            let b = rng.gen_range(0..entities);
            if a != b {
                set.insert((a, b));
            }
        }
        set
    };
    let sorted = |s: HashSet<(usize, usize)>| {
        let mut v: Vec<_> = s.into_iter().collect();
        v.sort_unstable();
        v
    };
    let first = sorted(pairs(chain_edges, rng));
    let second = sorted(pairs(chain_edges, rng));
    let noise = sorted(pairs(noise_edges, rng));

    let mut composed = HashSet::new();
    for &(x, y) in &first {
        for &(y2, z) in &second {
            if y == y2 && x != z {
                composed.insert((x, z));
            }
        }
    }
    let composed = sorted(composed);

    let mut out = Vec::new();
    for (rel, set) in [(R_FIRST, &first), (R_SECOND, &second), (R_COMPOSED, &composed), (R_NOISE, &noise)] {
        out.extend(set.iter().map(|&(a, b)| Triple::new(a, rel, b)));
    }
    Ok(out)
}

/// A composition dataset in the inductive layout.
#[derive(Debug, Clone)]
pub struct CompositionDataset {
    pub relations: RelationVocab,
    pub train_entities: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub ind_entities: Vocab,
    pub train_ind: Vec<Triple>,
    pub test_ind: Vec<Triple>,
}

fn split_composed(triples: Vec<Triple>, fraction: f64, seed: u64) -> (Vec<Triple>, Vec<Triple>) {
    let composed: Vec<Triple> = triples.iter().copied().filter(|t| t.rel == R_COMPOSED).collect();
    let (_, held) = holdout_split(&composed, fraction, seed);
    let held_set: HashSet<Triple> = held.iter().copied().collect();
    let graph = triples.into_iter().filter(|t| !held_set.contains(t)).collect();
    (graph, held)
}

pub fn composition_dataset(cfg: &CompositionConfig) -> Result<CompositionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_all = composition_graph(cfg.entities, cfg.chain_edges, cfg.noise_edges, &mut rng)?;
    let ind_all = composition_graph(cfg.entities, cfg.chain_edges, cfg.noise_edges, &mut rng)?;
    let (train, valid) = split_composed(train_all, cfg.valid_fraction, rng.gen());
    let (train_ind, test_ind) = split_composed(ind_all, cfg.test_fraction, rng.gen());
    if valid.is_empty() || test_ind.is_empty() {
        return Err(Error::Config("composition dataset produced an empty held-out split".into()));
    }
    Ok(CompositionDataset {
        relations: RelationVocab::from_names(COMPOSITION_RELATIONS),
        train_entities: Vocab::from_names((0..cfg.entities).map(|i| format!("e{i}"))),
        train,
        valid,
        ind_entities: Vocab::from_names((0..cfg.entities).map(|i| format!("n{i}"))),
        train_ind,
        test_ind,
    })
}

impl CompositionDataset {
    /// Write `train.txt`, `valid.txt`, `train_ind.txt` and `test_ind.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("train.txt", &self.train, &self.train_entities),
            ("valid.txt", &self.valid, &self.train_entities),
            ("train_ind.txt", &self.train_ind, &self.ind_entities),
            ("test_ind.txt", &self.test_ind, &self.ind_entities),
        ];
        for (name, triples, vocab) in files {
            let path = dir.join(name);
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_triples(&mut BufWriter::new(file), triples, vocab, &self.relations).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Random multigraph with `triples` distinct base triples over `entities`
/// nodes and `relations` relation types. Endpoints follow a mildly skewed
/// popularity so degree is heavy-tailed like real benchmarks.
pub fn random_graph(entities: usize, relations: usize, triples: usize, seed: u64) -> Result<(KnowledgeGraph, Vec<Triple>)> {
    if entities < 2 || relations == 0 || triples > entities * (entities - 1) * relations / 2 {
        return Err(Error::Config(format!(
            "cannot place {triples} triples on {entities} entities and {relations} relations"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..entities).collect();
    perm.shuffle(&mut rng);
    let pick = |rng: &mut ChaCha8Rng| {
        let x: f64 = rng.gen();
        perm[((x * x) * entities as f64) as usize % entities]
    };
    let mut set = HashSet::with_capacity(triples);
    let mut out = Vec::with_capacity(triples);
    while out.len() < triples {
        let (h, t) = (pick(&mut rng), pick(&mut rng));
        let r = rng.gen_range(0..relations);
        let tr = Triple::new(h, r, t);
        if h != t && set.insert(tr) {
            out.push(tr);
        }
    }
    Ok((KnowledgeGraph::build(&out, entities, relations, true)?, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{load_dataset, DatasetMode, LoadOptions};

    #[test]
    fn composition_law_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ts = composition_graph(30, 30, 10, &mut rng).unwrap();
        let has = |r: usize, a: usize, b: usize| ts.contains(&Triple::new(a, r, b));
        for x in 0..30 {
            for z in 0..30 {
                let via = (0..30).any(|y| has(R_FIRST, x, y) && has(R_SECOND, y, z));
                assert_eq!(has(R_COMPOSED, x, z), via && x != z);
            }
        }
        assert_eq!(ts.iter().filter(|t| t.rel == R_NOISE).count(), 10);
    }

    #[test]
    fn dataset_roundtrips_through_loader() {
        let ds = composition_dataset(&CompositionConfig::default()).unwrap();
        assert!(ds.valid.iter().chain(&ds.test_ind).all(|t| t.rel == R_COMPOSED));
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let opts = LoadOptions {
            mode: DatasetMode::Inductive,
            ..LoadOptions::default()
        };
        let b = load_dataset(dir.path(), &opts).unwrap();
        assert_eq!(b.train_graph.base_triples().len(), ds.train.len());
        assert_eq!(b.valid_triples.len(), ds.valid.len());
        assert_eq!(b.test_triples.len(), ds.test_ind.len());
        assert_eq!(b.relations.names(), &COMPOSITION_RELATIONS);
    }

    #[test]
    fn random_graph_density() {
        let (g, ts) = random_graph(2000, 180, 5000, 1).unwrap();
        assert_eq!(ts.len(), 5000);
        assert_eq!(g.num_edges(), 10000);
        assert!(random_graph(3, 1, 10, 0).is_err());
    }
}
