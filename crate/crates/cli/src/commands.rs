use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rest_kg::bench::{compare_extraction, CSV_HEADER};
use rest_kg::checkpoint::Checkpoint;
use rest_kg::evaluator::{derive_seed, evaluate, ModelScorer, OracleScorer, RandomScorer, TripleScorer};
use rest_kg::kg::{load_dataset, DatasetBundle, Triple};
use rest_kg::rule_algebra::{random_instance, random_weights, verify_rule_support, verify_tropical, InstanceBounds};
use rest_kg::rules::score_rules;
use rest_kg::subgraph::{extract as extract_subgraph, ExtractionConfig};
use rest_kg::synthetic::random_graph;
use rest_kg::trainer::train as run_training;
use rest_kg::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::ConfigArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    Model,
    Oracle,
    Random,
}

impl FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "model" => Ok(ScorerKind::Model),
            "oracle" => Ok(ScorerKind::Oracle),
            "random" => Ok(ScorerKind::Random),
            other => Err(format!("unknown scorer {other:?} (model, oracle, random)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphChoice {
    Train,
    Test,
}

impl FromStr for GraphChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(GraphChoice::Train),
            "test" => Ok(GraphChoice::Test),
            other => Err(format!("unknown graph {other:?} (train, test)")),
        }
    }
}

fn io_err(path: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn load_bundle(cfg: &RunConfig) -> Result<DatasetBundle> {
    load_dataset(cfg.dataset_dir()?, &cfg.load)
}

fn require_checkpoint(cfg: &RunConfig) -> Result<&Path> {
    cfg.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("missing required key checkpoint".into()))
}

pub fn train(args: &ConfigArgs, out: &mut impl Write) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let ckpt_path = require_checkpoint(&cfg)?.to_path_buf();
    let bundle = load_bundle(&cfg)?;
    let mut log_file = cfg.log.as_deref().map(create).transpose()?;
    let mut write_err = None;
    let outcome = run_training(&bundle, &cfg.model, &cfg.train, |e| {
        let line = serde_json::to_string(e).expect("epoch log serializes");
        let res = match log_file.as_mut() {
            Some(f) => writeln!(f, "{line}").and_then(|_| f.flush()),
            None => writeln!(out, "{line}"),
        };
        if let Err(err) = res {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(cfg.log.clone().unwrap_or_else(|| "<stdout>".into()), e));
    }
    outcome.best.save(&ckpt_path)?;
    eprintln!(
        "saved epoch {} checkpoint to {}",
        outcome.best.epoch,
        ckpt_path.display()
    );
    Ok(())
}

pub fn eval(args: &ConfigArgs, kind: ScorerKind, out: &mut impl Write) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let bundle = load_bundle(&cfg)?;
    let known = bundle.test_known();
    let checkpoint;
    let scorer: Box<dyn TripleScorer> = match kind {
        ScorerKind::Model => {
            checkpoint = Checkpoint::load(require_checkpoint(&cfg)?)?;
            if checkpoint.relations.names() != bundle.relations.names() {
                return Err(Error::Checkpoint(
                    "checkpoint relation vocabulary differs from the dataset".into(),
                ));
            }
            Box::new(ModelScorer::new(&checkpoint.params))
        }
        ScorerKind::Oracle => Box::new(OracleScorer { truth: known.clone() }),
        ScorerKind::Random => Box::new(RandomScorer { seed: cfg.ranking.seed }),
    };
    let metrics = evaluate(
        scorer.as_ref(),
        bundle.test_graph(),
        &bundle.test_triples,
        &known,
        &cfg.ranking,
    )?;
    let record = json!({
        "dataset": cfg.dataset_name(),
        "version": cfg.dataset_version(),
        "hits1": metrics.hits1,
        "hits5": metrics.hits5,
        "hits10": metrics.hits10,
        "mrr": metrics.mrr,
        "negatives": cfg.ranking.num_negatives,
        "sides": cfg.ranking.sides.to_string(),
        "seed": cfg.ranking.seed,
    });
    if let Some(path) = &cfg.output {
        let mut f = create(path)?;
        writeln!(f, "{record}").map_err(|e| Error::io(path, e))?;
    }
    writeln!(out, "{record}").map_err(io_err("<stdout>"))?;
    if metrics.skipped > 0 {
        eprintln!("skipped {} self-loop test triples", metrics.skipped);
    }
    Ok(())
}

pub fn verify(instances: usize, bounds: InstanceBounds, k: usize, seed: u64, out: &mut impl Write) -> Result<()> {
    if k == 0 {
        return Err(Error::Usage("--k must be positive".into()));
    }
    let mut failures = 0usize;
    for i in 0..instances {
        let instance_seed = derive_seed(seed, &[i as u64]);
        let sg = random_instance(instance_seed, &bounds)?;
        let support = verify_rule_support(&sg, k)?;
        let weights = random_weights(instance_seed, sg.max_relation().map_or(1, |r| r + 1));
        let tropical = verify_tropical(&sg, k, &weights)?;
        let ok = support.passed() && tropical.matched;
        let mut line = format!(
            "{} seed={instance_seed} nodes={} edges={} k={k} monomials={}",
            if ok { "MATCH" } else { "MISMATCH" },
            sg.num_nodes(),
            sg.num_edges(),
            support.oracle_support.len(),
        );
        if !ok {
            failures += 1;
            match &support.witness {
                Some(m) => line.push_str(&format!(" witness={:?}", m.exponents())),
                None if !support.coefficients_positive => line.push_str(" witness=nonpositive-coefficient"),
                None => line.push_str(&format!(" tropical={:?}/{:?}", tropical.forward.value(), tropical.oracle.value())),
            }
        }
        writeln!(out, "{line}").map_err(io_err("<stdout>"))?;
    }
    if failures > 0 {
        return Err(Error::Numeric(format!("{failures} of {instances} instances mismatched")));
    }
    Ok(())
}

pub fn rulescore(path: &Path, head: Option<&str>, max_body_len: usize, top_k: usize, out: &mut impl Write) -> Result<()> {
    let ck = Checkpoint::load(path)?;
    let vocab = &ck.relations;
    let heads: Vec<usize> = match head {
        Some(name) => vec![vocab
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown relation {name:?}")))?],
        None => (0..vocab.base_count()).collect(),
    };
    writeln!(out, "head_relation,body,score").map_err(io_err("<stdout>"))?;
    for h in heads {
        for c in score_rules(&ck.params, h, max_body_len, top_k)? {
            writeln!(out, "{},{},{:.6}", vocab.display(h), c.body_names(vocab), c.score).map_err(io_err("<stdout>"))?;
        }
    }
    Ok(())
}

fn parse_random_spec(spec: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("--random expects E,R,T integers, got {spec:?}")))?;
    match parts[..] {
        [e, r, t] => Ok((e, r, t)),
        _ => Err(Error::Usage(format!("--random expects E,R,T integers, got {spec:?}"))),
    }
}

pub fn bench(args: &ConfigArgs, random: Option<&str>, queries: usize, repeats: usize, out: &mut impl Write) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let seed = cfg.train.seed;
    let (name, graph) = match random {
        Some(spec) => {
            let (e, r, t) = parse_random_spec(spec)?;
            (format!("random_{e}_{r}_{t}"), random_graph(e, r, t, seed)?.0)
        }
        None => (cfg.dataset_name(), load_bundle(&cfg)?.train_graph),
    };
    let mut pool: Vec<Triple> = graph.base_triples().to_vec();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xBE1C])));
    pool.truncate(queries);
    let ext = ExtractionConfig {
        hops: cfg.model.hops,
        scope: cfg.model.scope,
        max_nodes: None,
    };
    let cmp = compare_extraction(&graph, &pool, &ext, repeats)?;
    writeln!(out, "{CSV_HEADER}").map_err(io_err("<stdout>"))?;
    for row in cmp.csv_rows(&name, &cfg.model.scope.to_string()) {
        writeln!(out, "{row}").map_err(io_err("<stdout>"))?;
    }
    Ok(())
}

pub fn extract(args: &ConfigArgs, names: [&str; 3], which: GraphChoice, out: &mut impl Write) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    let bundle = load_bundle(&cfg)?;
    let (graph, entities) = match which {
        GraphChoice::Train => (&bundle.train_graph, &bundle.train_entities),
        GraphChoice::Test => (bundle.test_graph(), bundle.test_entity_vocab()),
    };
    let entity = |n: &str| {
        entities
            .get(n)
            .ok_or_else(|| Error::InvalidQuery(format!("unknown entity {n:?}")))
    };
    let rel = bundle
        .relations
        .get(names[1])
        .ok_or_else(|| Error::InvalidQuery(format!("unknown relation {:?}", names[1])))?;
    let query = Triple::new(entity(names[0])?, rel, entity(names[2])?);
    let ext = ExtractionConfig {
        hops: cfg.model.hops,
        scope: cfg.model.scope,
        max_nodes: None,
    };
    let sg = extract_subgraph(graph, query, &ext)?;
    let text = sg.to_edge_list(
        |e| entities.name(e).unwrap_or("?").to_string(),
        |r| bundle.relations.display(r),
    );
    out.write_all(text.as_bytes()).map_err(io_err("<stdout>"))?;
    Ok(())
}
