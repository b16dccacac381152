//! Negative sampling, loss, Adam and the training loop.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_value, Tape, Tensor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::evaluator::{derive_seed, evaluate, ModelScorer, RankingConfig, Sides};
use crate::kg::{DatasetBundle, KnowledgeGraph, Triple};
use crate::model::{forward_on_tape, ModelConfig, ModelParams};
use crate::subgraph::{extract, ExtractionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub valid_every: usize,
    /// Negatives per validation ranking.
    pub valid_negatives: usize,
    /// Rank at most this many validation triples per check.
    pub valid_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            epochs: 10,
            batch_size: 16,
            negatives_per_positive: 1,
            seed: 0,
            valid_every: 1,
            valid_negatives: 50,
            valid_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("negatives_per_positive", self.negatives_per_positive),
            ("valid_every", self.valid_every),
            ("valid_negatives", self.valid_negatives),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Corrupt head or tail (fair coin) with a uniform entity until the triple
/// is absent from `graph`, differs from `positive` and is not a self-loop.
pub fn sample_negatives<R: Rng>(graph: &KnowledgeGraph, positive: Triple, n: usize, rng: &mut R) -> Result<Vec<Triple>> {
    const TRIES: usize = 1000;
    if n == 0 {
        return Err(Error::Sampling("negative count must be at least 1".into()));
    }
    let entities = graph.entity_count();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut found = None;
        for _ in 0..TRIES {
            let e = rng.gen_range(0..entities);
            let cand = if rng.gen_bool(0.5) {
                Triple::new(e, positive.rel, positive.tail)
            } else {
                Triple::new(positive.head, positive.rel, e)
            };
            if cand != positive && cand.head != cand.tail && !graph.contains(&cand) {
                found = Some(cand);
                break;
            }
        }
        match found {
            Some(t) => out.push(t),
            None => {
                return Err(Error::Sampling(format!(
                    "no valid corruption of {positive:?} after {TRIES} tries"
                )))
            }
        }
    }
    Ok(out)
}

/// Mean clamped binary cross-entropy.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Shape {
            op: "bce_loss",
            detail: format!("{} scores vs {} labels", scores.len(), labels.len()),
        });
    }
    Ok(bce_value(scores, labels))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.first.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        if params[i].len() != grads[i].len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("parameter {i}: {:?} vs gradient {:?}", params[i].shape(), grads[i].shape()),
            });
        }
        let g = grads[i].data();
        let m = state.first[i].data_mut();
        for (m, g) in m.iter_mut().zip(g) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        }
        let v = state.second[i].data_mut();
        for (v, g) in v.iter_mut().zip(g) {
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        }
        let (m, v) = (state.first[i].data(), state.second[i].data());
        for ((p, m), v) in params[i].data_mut().iter_mut().zip(m).zip(v) {
            *p -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_hits10: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation Hits@10, or of the
    /// last epoch when there is no validation set.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Loss and parameter gradients for one positive and its negatives.
pub fn example_gradients(
    graph: &KnowledgeGraph,
    params: &ModelParams,
    extraction: &ExtractionConfig,
    positive: Triple,
    negatives: &[Triple],
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::training(dropout_seed);
    let bound = params.bind(&mut tape);
    let mut scores = Vec::with_capacity(1 + negatives.len());
    let mut labels = Vec::with_capacity(1 + negatives.len());
    for (i, &t) in std::iter::once(&positive).chain(negatives).enumerate() {
        let sg = extract(graph, t, extraction)?;
        scores.push(forward_on_tape(&mut tape, &sg, &bound)?);
        labels.push(if i == 0 { 1.0 } else { 0.0 });
    }
    let all = tape.concat(&scores)?;
    let loss = tape.bce(all, &labels)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let out = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, out))
}

/// Train on the bundle's training graph. Every positive is scored with its
/// own edge removed from its subgraph. Work inside a batch runs on the
/// current rayon pool; per-example random streams are derived from the
/// seed and the example's position, and gradients are summed in position
/// order, so results do not depend on the worker count.
pub fn train(
    bundle: &DatasetBundle,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    mcfg.validate()?;
    let graph = &bundle.train_graph;
    let positives = graph.base_triples().to_vec();
    if positives.is_empty() {
        return Err(Error::Construction("training graph has no triples".into()));
    }
    let mut params = ModelParams::init(mcfg, graph.relation_count(), derive_seed(tcfg.seed, &[0xA11]))?;
    let mut adam = AdamState::new(params.tensors());
    let extraction = ExtractionConfig {
        hops: mcfg.hops,
        scope: mcfg.scope,
        max_nodes: None,
    };
    let known: HashSet<Triple> = bundle.train_known();
    let valid: Vec<Triple> = match tcfg.valid_limit {
        Some(n) => bundle.valid_triples.iter().copied().take(n).collect(),
        None => bundle.valid_triples.clone(),
    };
    let ranking = RankingConfig {
        num_negatives: tcfg.valid_negatives,
        filtered: true,
        seed: derive_seed(tcfg.seed, &[0xE7A1]),
        sides: Sides::Both,
    };

    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last = None;
    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        let mut order = positives.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, &[epoch as u64, 0])));

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let base = b * tcfg.batch_size;
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &pos)| {
                    let idx = (base + j) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, &[epoch as u64, 1, idx]));
                    let negs = sample_negatives(graph, pos, tcfg.negatives_per_positive, &mut rng)?;
                    let drop_seed = derive_seed(tcfg.seed, &[epoch as u64, 2, idx]);
                    example_gradients(graph, &params, &extraction, pos, &negs, drop_seed)
                })
                .collect();
            let mut total: Vec<Tensor> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut batch_loss = 0.0;
            for (j, r) in results.into_iter().enumerate() {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {loss} at epoch {epoch}, batch {b}, triple {:?}",
                        batch[j]
                    )));
                }
                batch_loss += loss;
                for (acc, g) in total.iter_mut().zip(&grads) {
                    acc.add_assign(g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for t in &mut total {
                t.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam_step(params.tensors_mut(), &total, &mut adam, tcfg.learning_rate)?;
            if let Some((i, _)) = params.tensors().iter().enumerate().find(|(_, t)| !t.is_finite()) {
                return Err(Error::Numeric(format!(
                    "parameter {} became non-finite at epoch {epoch}, batch {b}",
                    params.names()[i]
                )));
            }
            loss_sum += batch_loss;
        }

        let valid_hits10 = if !valid.is_empty() && epoch % tcfg.valid_every == 0 {
            let scorer = ModelScorer::new(&params);
            Some(evaluate(&scorer, graph, &valid, &known, &ranking)?.hits10)
        } else {
            None
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / positives.len() as f64,
            valid_hits10,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        let ckpt = || Checkpoint::new(params.clone(), bundle.relations.clone(), epoch, adam.clone());
        if let Some(h) = valid_hits10 {
            if best.as_ref().is_none_or(|(b, _)| h >= *b) {
                best = Some((h, ckpt()));
            }
        }
        last = Some(ckpt());
    }
    let best = match best {
        Some((_, c)) => c,
        None => last.expect("at least one epoch"),
    };
    Ok(TrainOutcome { best, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn dense_pair_cannot_be_corrupted() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(1, 0, 0)], 2, 1, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_negatives(&g, Triple::new(0, 0, 1), 1, &mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn negatives_change_one_endpoint_with_balanced_sides() {
        let triples: Vec<Triple> = (0..50).map(|i| Triple::new(i, 0, (i + 1) % 50)).collect();
        let g = KnowledgeGraph::build(&triples, 50, 1, true).unwrap();
        let pos = triples[7];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let negs = sample_negatives(&g, pos, 1000, &mut rng).unwrap();
        let mut heads = 0;
        for n in &negs {
            let head_changed = n.head != pos.head;
            let tail_changed = n.tail != pos.tail;
            assert!(head_changed ^ tail_changed);
            assert!(!g.contains(n));
            heads += head_changed as usize;
        }
        let frac = heads as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&frac), "{frac}");
    }

    #[test]
    fn bce_cases() {
        assert!(approx(bce_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap(), std::f64::consts::LN_2, 1e-15));
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        let want = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!(approx(bce_loss(&[0.8, 0.3], &[1.0, 0.0]).unwrap(), want, 1e-15));
        assert!(bce_loss(&[0.5], &[]).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::vector(vec![3.0, -0.5])], &mut s, 0.01).unwrap();
        assert!(approx(p[0].data()[0], -0.01, 1e-8));
        assert!(approx(p[0].data()[1], 0.01, 1e-8));
    }

    #[test]
    fn adam_three_step_trace() {
        let gs = [0.5, -1.0, 2.0];
        let lr = 0.1;
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in gs.iter().enumerate() {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        for g in gs {
            adam_step(&mut p, &[Tensor::scalar(g)], &mut s, lr).unwrap();
        }
        assert!(approx(p[0].item(), x, 1e-14));
        assert_eq!(s.step, 3);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
