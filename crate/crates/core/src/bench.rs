//! Extraction timing with and without double-radius node labeling.

use std::hint::black_box;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::subgraph::{double_radius_label, extract, ExtractionConfig, NodeLabel, Subgraph};

/// A subgraph prepared the labeled way: labels computed, nodes outside the
/// labeling radius of either endpoint dropped, one-hot label features built.
#[derive(Debug, Clone)]
pub struct LabeledSubgraph {
    pub subgraph: Subgraph,
    pub labels: Vec<NodeLabel>,
    /// Row per kept node: one-hot distance to u followed by one-hot distance to v.
    pub features: Vec<Vec<f64>>,
    pub kept: Vec<usize>,
}

/// Labeled extraction baseline.
pub fn extract_labeled(graph: &KnowledgeGraph, query: Triple, cfg: &ExtractionConfig) -> Result<LabeledSubgraph> {
    let subgraph = extract(graph, query, cfg)?;
    let labels = double_radius_label(&subgraph);
    let (u, _, v) = subgraph.query();
    let width = cfg.hops + 1;
    let mut kept = Vec::with_capacity(labels.len());
    let mut features = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let (Some(du), Some(dv)) = (l.dist_u, l.dist_v) else {
            if i != u && i != v {
                continue;
            }
            kept.push(i);
            features.push(vec![0.0; 2 * width]);
            continue;
        };
        kept.push(i);
        let mut row = vec![0.0; 2 * width];
        row[du.min(cfg.hops)] = 1.0;
        row[width + dv.min(cfg.hops)] = 1.0;
        features.push(row);
    }
    Ok(LabeledSubgraph {
        subgraph,
        labels,
        features,
        kept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub with_labeling: bool,
    pub queries: usize,
    /// Best total over the repeats.
    pub total_seconds: f64,
    pub mean_ms: f64,
}

/// Time extraction of every query, single-threaded; keep the fastest of
/// `repeats` passes.
pub fn bench_extract(
    graph: &KnowledgeGraph,
    queries: &[Triple],
    cfg: &ExtractionConfig,
    with_labeling: bool,
    repeats: usize,
) -> Result<BenchReport> {
    if queries.is_empty() {
        return Err(Error::Config("benchmark needs at least one query".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("benchmark needs at least one repeat".into()));
    }
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        for &q in queries {
            if with_labeling {
                black_box(extract_labeled(graph, black_box(q), cfg)?);
            } else {
                black_box(extract(graph, black_box(q), cfg)?);
            }
        }
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        with_labeling,
        queries: queries.len(),
        total_seconds: best,
        mean_ms: 1e3 * best / queries.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchComparison {
    pub unlabeled: BenchReport,
    pub labeled: BenchReport,
    /// Labeled time over unlabeled time.
    pub speedup: f64,
}

pub fn compare_extraction(graph: &KnowledgeGraph, queries: &[Triple], cfg: &ExtractionConfig, repeats: usize) -> Result<BenchComparison> {
    // warm caches and allocator once for both variants
    bench_extract(graph, queries, cfg, false, 1)?;
    let unlabeled = bench_extract(graph, queries, cfg, false, repeats)?;
    let labeled = bench_extract(graph, queries, cfg, true, repeats)?;
    Ok(BenchComparison {
        unlabeled,
        labeled,
        speedup: labeled.total_seconds / unlabeled.total_seconds,
    })
}

pub const CSV_HEADER: &str = "dataset,scope,with_labeling,queries,total_seconds,mean_ms,speedup";

impl BenchComparison {
    pub fn csv_rows(&self, dataset: &str, scope: &str) -> [String; 2] {
        let row = |r: &BenchReport, speedup: String| {
            format!(
                "{dataset},{scope},{},{},{:.6},{:.6},{speedup}",
                r.with_labeling, r.queries, r.total_seconds, r.mean_ms
            )
        };
        [row(&self.unlabeled, format!("{:.3}", self.speedup)), row(&self.labeled, String::new())]
    }
}
