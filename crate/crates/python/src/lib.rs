//! Python bindings for the `rest_kg` core crate.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rest::checkpoint::Checkpoint;
use rest::evaluator::{evaluate, ModelScorer, RankingConfig};
use rest::kg::{load_dataset, DatasetBundle, DatasetMode, LoadOptions, Triple};
use rest::model::{ModelConfig, ModelParams};
use rest::subgraph::{extract, ExtractionConfig};
use rest::trainer::TrainConfig;
use rest::{Error, ErrorCategory};

fn to_py(e: Error) -> PyErr {
    match e.category() {
        ErrorCategory::Usage | ErrorCategory::Config => PyValueError::new_err(e.to_string()),
        ErrorCategory::Data => PyIOError::new_err(e.to_string()),
        ErrorCategory::Runtime => PyRuntimeError::new_err(e.to_string()),
    }
}

fn model_config(settings: Option<HashMap<String, String>>) -> PyResult<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (k, v) in settings.unwrap_or_default() {
        if !cfg.set(&k, &v).map_err(to_py)? {
            return Err(PyValueError::new_err(format!("unknown model setting {k:?}")));
        }
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// A loaded benchmark directory.
#[pyclass(module = "rest_kg", frozen)]
struct Dataset {
    inner: DatasetBundle,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (path, mode = "inductive"))]
    fn new(path: PathBuf, mode: &str) -> PyResult<Self> {
        let opts = LoadOptions {
            mode: mode.parse::<DatasetMode>().map_err(to_py)?,
            ..LoadOptions::default()
        };
        Ok(Dataset {
            inner: load_dataset(&path, &opts).map_err(to_py)?,
        })
    }

    /// Base relation names.
    #[getter]
    fn relations(&self) -> Vec<String> {
        self.inner.relations.names().to_vec()
    }

    #[getter]
    fn num_train_edges(&self) -> usize {
        self.inner.train_graph.num_edges()
    }

    /// Test triples as `(head, relation, tail)` names.
    fn test_triples(&self) -> Vec<(String, String, String)> {
        let ents = self.inner.test_entity_vocab();
        self.inner
            .test_triples
            .iter()
            .map(|t| {
                (
                    ents.name(t.head).unwrap_or("?").to_string(),
                    self.inner.relations.display(t.rel),
                    ents.name(t.tail).unwrap_or("?").to_string(),
                )
            })
            .collect()
    }

    /// Extract the subgraph around a named triple from the training graph
    /// (or the test graph with `graph="test"`).
    #[pyo3(signature = (head, relation, tail, hops = 3, scope = "enclosing", graph = "train"))]
    fn extract(&self, head: &str, relation: &str, tail: &str, hops: usize, scope: &str, graph: &str) -> PyResult<Subgraph> {
        let (g, ents) = match graph {
            "train" => (&self.inner.train_graph, &self.inner.train_entities),
            "test" => (self.inner.test_graph(), self.inner.test_entity_vocab()),
            other => return Err(PyValueError::new_err(format!("unknown graph {other:?}"))),
        };
        let ent = |n: &str| ents.get(n).ok_or_else(|| PyValueError::new_err(format!("unknown entity {n:?}")));
        let rel = self
            .inner
            .relations
            .get(relation)
            .ok_or_else(|| PyValueError::new_err(format!("unknown relation {relation:?}")))?;
        let cfg = ExtractionConfig {
            hops,
            scope: scope.parse().map_err(to_py)?,
            max_nodes: None,
        };
        let sg = extract(g, Triple::new(ent(head)?, rel, ent(tail)?), &cfg).map_err(to_py)?;
        Ok(Subgraph { inner: sg })
    }
}

#[pyclass(module = "rest_kg", frozen)]
struct Subgraph {
    inner: rest::subgraph::Subgraph,
}

#[pymethods]
impl Subgraph {
    /// Subgraph on `num_nodes` local nodes with query edge `query` plus `edges`.
    #[new]
    fn new(num_nodes: usize, query: (usize, usize, usize), edges: Vec<(usize, usize, usize)>) -> PyResult<Self> {
        Ok(Subgraph {
            inner: rest::subgraph::Subgraph::from_edges(num_nodes, query, &edges).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn query_edge(&self) -> usize {
        self.inner.query_edge()
    }

    /// `(src, relation id, dst)` in local indices.
    fn edges(&self) -> Vec<(usize, usize, usize)> {
        self.inner.edges().iter().map(|e| (e.src, e.rel, e.dst)).collect()
    }
}

/// Model parameters plus the relation vocabulary they were trained on.
#[pyclass(module = "rest_kg", frozen)]
struct Model {
    inner: Checkpoint,
}

#[pymethods]
impl Model {
    /// Fresh parameters for `relations` base relation names.
    #[new]
    #[pyo3(signature = (relations, seed = 0, config = None))]
    fn new(relations: Vec<String>, seed: u64, config: Option<HashMap<String, String>>) -> PyResult<Self> {
        let cfg = model_config(config)?;
        let vocab = rest::kg::RelationVocab::from_names(relations);
        let params = ModelParams::init(&cfg, vocab.augmented_count(), seed).map_err(to_py)?;
        Ok(Model {
            inner: Checkpoint::from_params(params, vocab),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: Checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    /// Model settings as `key -> value` strings.
    fn config(&self) -> HashMap<String, String> {
        self.inner
            .config()
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Plausibility in (0, 1) of the subgraph's query edge.
    fn score(&self, subgraph: &Subgraph) -> PyResult<f64> {
        rest::model::score(&subgraph.inner, &self.inner.params).map_err(to_py)
    }

    /// Top rule bodies for `head` as `(arrow-joined body, score)`.
    #[pyo3(signature = (head, max_body_len = 3, top_k = 3))]
    fn rules(&self, head: &str, max_body_len: usize, top_k: usize) -> PyResult<Vec<(String, f64)>> {
        let vocab = &self.inner.relations;
        let h = vocab
            .get(head)
            .ok_or_else(|| PyValueError::new_err(format!("unknown relation {head:?}")))?;
        let found = rest::rules::score_rules(&self.inner.params, h, max_body_len, top_k).map_err(to_py)?;
        Ok(found.iter().map(|c| (c.body_names(vocab), c.score)).collect())
    }

    /// Filtered ranking metrics on the dataset's test split.
    #[pyo3(signature = (dataset, num_negatives = 50, seed = 0))]
    fn evaluate(&self, dataset: &Dataset, num_negatives: usize, seed: u64) -> PyResult<HashMap<String, f64>> {
        let d = &dataset.inner;
        let cfg = RankingConfig {
            num_negatives,
            seed,
            ..RankingConfig::default()
        };
        let scorer = ModelScorer::new(&self.inner.params);
        let m = evaluate(&scorer, d.test_graph(), &d.test_triples, &d.test_known(), &cfg).map_err(to_py)?;
        Ok(HashMap::from([
            ("hits1".to_string(), m.hits1),
            ("hits5".to_string(), m.hits5),
            ("hits10".to_string(), m.hits10),
            ("mrr".to_string(), m.mrr),
            ("count".to_string(), m.count as f64),
        ]))
    }
}

/// Train on `dataset`; returns the best model and the per-epoch losses.
#[pyfunction]
#[pyo3(signature = (dataset, epochs = 10, learning_rate = 5e-4, batch_size = 16, seed = 0, config = None))]
fn train(
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    config: Option<HashMap<String, String>>,
) -> PyResult<(Model, Vec<f64>)> {
    let mcfg = model_config(config)?;
    let tcfg = TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seed,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    let out = rest::trainer::train(&dataset.inner, &mcfg, &tcfg, |e| losses.push(e.train_loss)).map_err(to_py)?;
    Ok((Model { inner: out.best }, losses))
}

/// Check the single-source semiring recursion against the closed-walk
/// oracle on one random instance.
#[pyfunction]
#[pyo3(signature = (seed, k = 3, max_nodes = 8))]
fn verify_instance(seed: u64, k: usize, max_nodes: usize) -> PyResult<bool> {
    let bounds = rest::rule_algebra::InstanceBounds {
        max_nodes,
        ..Default::default()
    };
    let sg = rest::rule_algebra::random_instance(seed, &bounds).map_err(to_py)?;
    let report = rest::rule_algebra::verify_rule_support(&sg, k).map_err(to_py)?;
    Ok(report.passed())
}

/// Write the generated composition dataset (r3 holds iff r1 then r2) to `path`.
#[pyfunction]
#[pyo3(signature = (path, seed = 0))]
fn write_composition_dataset(path: PathBuf, seed: u64) -> PyResult<()> {
    let cfg = rest::synthetic::CompositionConfig {
        seed,
        ..Default::default()
    };
    rest::synthetic::composition_dataset(&cfg)
        .and_then(|d| d.write(&path))
        .map_err(to_py)
}

#[pymodule]
fn rest_kg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Subgraph>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(verify_instance, m)?)?;
    m.add_function(wrap_pyfunction!(write_composition_dataset, m)?)?;
    Ok(())
}
