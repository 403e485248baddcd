//! Comparative metrics for recovered structures, inferred orders and raw
//! response behavior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::KnowledgeSet;
use crate::graph::{canonical_pairs, find_cycle, shd, Dag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub shd: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub fdr: f64,
    /// True adjacencies present in the estimate in either orientation.
    pub edge_coverage: f64,
}

pub fn edge_metrics(estimate: &Dag, truth: &Dag) -> Result<EdgeMetrics> {
    let shd = shd(estimate, truth)?;
    let asserted = estimate.edge_count();
    let correct = estimate
        .edges()
        .filter(|&(u, v)| truth.has_edge(u, v))
        .count();
    let covered = truth
        .edges()
        .filter(|&(u, v)| estimate.has_edge(u, v) || estimate.has_edge(v, u))
        .count();
    let precision = if asserted == 0 {
        1.0
    } else {
        correct as f64 / asserted as f64
    };
    let (recall, coverage) = if truth.edge_count() == 0 {
        (1.0, 1.0)
    } else {
        let t = truth.edge_count() as f64;
        (correct as f64 / t, covered as f64 / t)
    };
    Ok(EdgeMetrics {
        shd,
        edge_precision: precision,
        edge_recall: recall,
        fdr: 1.0 - precision,
        edge_coverage: coverage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderMetrics {
    pub rank_correlation: f64,
    pub pairwise_order_accuracy: f64,
}

/// Order quality of node scores (higher = more upstream) against `truth`.
pub fn order_metrics(scores: &BTreeMap<String, f64>, truth: &Dag) -> Result<OrderMetrics> {
    for name in scores.keys() {
        truth.index_of(name)?;
    }
    let values: Vec<f64> = truth
        .nodes()
        .iter()
        .map(|n| {
            scores
                .get(n)
                .copied()
                .ok_or_else(|| Error::UnknownNode(n.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(order_metrics_indexed(&values, truth))
}

pub fn order_metrics_indexed(scores: &[f64], truth: &Dag) -> OrderMetrics {
    let neg_depth: Vec<f64> = truth.depths().into_iter().map(|d| -(d as f64)).collect();
    let rank_correlation = spearman(scores, &neg_depth);

    let mut connected = 0usize;
    let mut agree = 0usize;
    for u in 0..truth.n() {
        for (v, d) in truth.distances_from(u).into_iter().enumerate() {
            if v != u && d.is_some() {
                connected += 1;
                if scores[u] > scores[v] {
                    agree += 1;
                }
            }
        }
    }
    let pairwise_order_accuracy = if connected == 0 {
        1.0
    } else {
        agree as f64 / connected as f64
    };
    OrderMetrics {
        rank_correlation,
        pairwise_order_accuracy,
    }
}

/// Average ranks, ties share the mean rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation; zero when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BehaviorMetrics {
    pub cycle_injection_rate: f64,
    pub edge_flip_frequency: f64,
    /// Re-queried pairs that received both a `+1` and a `-1` from the same expert.
    pub inconsistency_count: usize,
    pub abstention_rate: f64,
}

/// Behavior of raw edge-wise answers, possibly with repeats.
///
/// A snapshot is the `k`-th answer of one expert to each pair it was asked
/// at least `k` times; the cycle injection rate averages a cycle indicator
/// over all snapshots.
pub fn behavior_metrics(responses: &KnowledgeSet) -> BehaviorMetrics {
    if responses.is_empty() {
        return BehaviorMetrics::default();
    }
    let abstentions = responses.iter().filter(|r| r.value == 0).count();

    let mut snapshots = 0usize;
    let mut cyclic = 0usize;
    let mut requeried = 0usize;
    let mut flipped = 0usize;
    let mut inconsistent = 0usize;
    for (_, set) in responses.by_expert() {
        let mut names: Vec<String> = set
            .iter()
            .flat_map(|r| [r.query.u.clone(), r.query.v.clone()])
            .collect();
        names.sort();
        names.dedup();
        let idx = |s: &str| names.binary_search_by(|n| n.as_str().cmp(s)).unwrap();

        let mut history: BTreeMap<(usize, usize), Vec<i32>> = BTreeMap::new();
        for r in set.iter().map(|r| r.canonical()) {
            history
                .entry((idx(&r.query.u), idx(&r.query.v)))
                .or_default()
                .push(r.value.signum());
        }
        let rounds = history.values().map(Vec::len).max().unwrap_or(0);
        for k in 0..rounds {
            let edges = history
                .iter()
                .filter_map(|(&(u, v), vals)| match vals.get(k) {
                    Some(1) => Some((u, v)),
                    Some(-1) => Some((v, u)),
                    _ => None,
                });
            snapshots += 1;
            if find_cycle(names.len(), edges).is_some() {
                cyclic += 1;
            }
        }
        for vals in history.values().filter(|v| v.len() > 1) {
            requeried += 1;
            if vals.windows(2).any(|w| w[0] != w[1]) {
                flipped += 1;
            }
            if vals.contains(&1) && vals.contains(&-1) {
                inconsistent += 1;
            }
        }
    }
    BehaviorMetrics {
        cycle_injection_rate: if snapshots == 0 {
            0.0
        } else {
            cyclic as f64 / snapshots as f64
        },
        edge_flip_frequency: if requeried == 0 {
            0.0
        } else {
            flipped as f64 / requeried as f64
        },
        inconsistency_count: inconsistent,
        abstention_rate: abstentions as f64 / responses.len() as f64,
    }
}

/// Full comparative report. Order and behavior fields are absent when the
/// corresponding inputs were not provided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub shd: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub fdr: f64,
    pub edge_coverage: f64,
    pub rank_correlation: Option<f64>,
    pub pairwise_order_accuracy: Option<f64>,
    pub abstention_rate: Option<f64>,
    pub cycle_injection_rate: Option<f64>,
    pub edge_flip_frequency: Option<f64>,
    pub inconsistency_count: Option<usize>,
}

impl MetricsReport {
    pub fn new(
        edge: EdgeMetrics,
        order: Option<OrderMetrics>,
        behavior: Option<BehaviorMetrics>,
    ) -> Self {
        MetricsReport {
            shd: edge.shd,
            edge_precision: edge.edge_precision,
            edge_recall: edge.edge_recall,
            fdr: edge.fdr,
            edge_coverage: edge.edge_coverage,
            rank_correlation: order.map(|o| o.rank_correlation),
            pairwise_order_accuracy: order.map(|o| o.pairwise_order_accuracy),
            abstention_rate: behavior.map(|b| b.abstention_rate),
            cycle_injection_rate: behavior.map(|b| b.cycle_injection_rate),
            edge_flip_frequency: behavior.map(|b| b.edge_flip_frequency),
            inconsistency_count: behavior.map(|b| b.inconsistency_count),
        }
    }

    /// Edge metrics of `estimate`, plus order metrics when the estimate
    /// carries scores. Pairs absent from the estimate are skipped.
    pub fn for_estimate(estimate: &Dag, truth: &Dag, scores: Option<&[f64]>) -> Result<Self> {
        let edge = edge_metrics(estimate, truth)?;
        let order = scores.map(|s| order_metrics_indexed(s, truth));
        Ok(Self::new(edge, order, None))
    }
}

/// Pairs of `truth` that are connected by a directed path in either direction.
pub fn connected_pairs(truth: &Dag) -> usize {
    let reach = truth.path_lengths();
    canonical_pairs(truth.n())
        .into_iter()
        .filter(|&(u, v)| reach[u][v].is_some() || reach[v][u].is_some())
        .count()
}
