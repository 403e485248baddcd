//! Seeded end-to-end runs: simulate a crowd, elicit, aggregate, score.

use std::fs;
use std::path::Path;

use crowdcause::aggregate::{
    aggregate_expert_level, ordering_graph, per_expert_graphs, query_level_search, ExpertEstimate,
    QueryLevelConfig,
};
use crowdcause::design::{run_sequential, SequentialConfig, StageRecord};
use crowdcause::expert::{all_queries, build_crowd, elicit, KnowledgeSet, Protocol};
use crowdcause::inference::{infer_edgewise, DEFAULT_PSEUDOCOUNTS};
use crowdcause::metrics::edge_metrics;
use crowdcause::{shd, Dag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Aggregation, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub shd: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub fdr: f64,
    pub edge_coverage: f64,
    pub mean_individual_shd: f64,
    pub beats_individual: bool,
    pub responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub replicate: usize,
    #[serde(flatten)]
    pub record: StageRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub replicates: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub aggregation: Aggregation,
    pub shd: MeanSd,
    pub edge_precision: MeanSd,
    pub edge_recall: MeanSd,
    pub mean_individual_shd: MeanSd,
    /// Replicates where the aggregate beat the average member.
    pub beats_individual: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReplicateRow>,
    pub trace: Vec<TraceRow>,
    pub summary: Summary,
}

/// Combines a knowledge set into one graph with the configured strategy.
pub fn aggregate(
    d: &KnowledgeSet,
    nodes: &[String],
    how: Aggregation,
    restarts: usize,
    seed: u64,
) -> crowdcause::Result<Dag> {
    let protocol = d.protocol().ok_or(crowdcause::Error::EmptyResponses)?;
    match how {
        Aggregation::Single => match protocol {
            Protocol::EdgeWise => Ok(infer_edgewise(d, nodes, DEFAULT_PSEUDOCOUNTS)?.1),
            Protocol::OrderingWise => ordering_graph(d, nodes),
        },
        Aggregation::ExpertLevel => {
            let estimates: Vec<ExpertEstimate> = per_expert_graphs(d, nodes)?
                .into_iter()
                .map(ExpertEstimate::Graph)
                .collect();
            aggregate_expert_level(&estimates, None)
        }
        Aggregation::QueryLevel => {
            Ok(
                query_level_search(d, nodes, QueryLevelConfig { restarts, seed })?
                    .best
                    .graph,
            )
        }
    }
}

fn replicate(
    config: &ExperimentConfig,
    truth: &Dag,
    r: usize,
) -> CliResult<(ReplicateRow, Vec<TraceRow>)> {
    let seed = config.seed.wrapping_add(r as u64);
    let tag = |module: &'static str| {
        move |source| CliError::Replicate {
            module,
            replicate: r,
            source,
        }
    };
    let mut crowd = build_crowd(&config.members(), truth, seed).map_err(tag("expert-sim"))?;
    let (responses, trace) = match &config.design {
        Some(d) => {
            let out = run_sequential(
                &mut crowd,
                truth,
                &SequentialConfig {
                    stages: d.stages.clone(),
                    criterion: d.criterion,
                    protocol: config.protocol,
                    pool_mode: d.pool_mode,
                    seed,
                },
            )
            .map_err(tag("design-engine"))?;
            let trace = out
                .trace
                .into_iter()
                .map(|record| TraceRow {
                    replicate: r,
                    record,
                })
                .collect();
            (out.responses, trace)
        }
        None => (
            elicit(&mut crowd, &all_queries(truth), config.protocol).map_err(tag("expert-sim"))?,
            Vec::new(),
        ),
    };
    let nodes = truth.nodes();
    let estimate = aggregate(&responses, nodes, config.aggregation, config.restarts, seed)
        .map_err(tag("crowd-aggregation"))?;
    let m = edge_metrics(&estimate, truth).map_err(tag("graph-core"))?;
    let individual: Vec<f64> = per_expert_graphs(&responses, nodes)
        .map_err(tag("single-expert-inference"))?
        .iter()
        .map(|g| shd(g, truth).map(|s| s as f64))
        .collect::<crowdcause::Result<_>>()
        .map_err(tag("graph-core"))?;
    let mean_individual = individual.iter().sum::<f64>() / individual.len() as f64;
    Ok((
        ReplicateRow {
            replicate: r,
            seed,
            shd: m.shd,
            edge_precision: m.edge_precision,
            edge_recall: m.edge_recall,
            fdr: m.fdr,
            edge_coverage: m.edge_coverage,
            mean_individual_shd: mean_individual,
            beats_individual: (m.shd as f64) < mean_individual,
            responses: responses.len(),
        },
        trace,
    ))
}

/// Runs every replicate; results are ordered by replicate index whatever the
/// parallelism.
pub fn run_experiment(config: &ExperimentConfig) -> CliResult<ExperimentReport> {
    config.validate()?;
    let truth = config
        .network_file()?
        .to_dag()
        .map_err(|e| CliError::config("network", e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CliError::config("parallelism", e))?;
    let results: Vec<CliResult<(ReplicateRow, Vec<TraceRow>)>> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| replicate(config, &truth, r))
            .collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut trace = Vec::new();
    for res in results {
        let (row, t) = res?;
        rows.push(row);
        trace.extend(t);
    }
    let col = |f: fn(&ReplicateRow) -> f64| MeanSd::of(&rows.iter().map(f).collect::<Vec<_>>());
    let summary = Summary {
        replicates: rows.len(),
        seed: config.seed,
        protocol: config.protocol,
        aggregation: config.aggregation,
        shd: col(|r| r.shd as f64),
        edge_precision: col(|r| r.edge_precision),
        edge_recall: col(|r| r.edge_recall),
        mean_individual_shd: col(|r| r.mean_individual_shd),
        beats_individual: rows.iter().filter(|r| r.beats_individual).count(),
    };
    Ok(ExperimentReport {
        rows,
        trace,
        summary,
    })
}

impl ExperimentReport {
    pub fn csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
            .collect()
    }

    /// Writes `replicates.csv`, `summary.json` and, for designed runs,
    /// `design-trace.jsonl`.
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("replicates.csv"), self.csv()?)?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        if !self.trace.is_empty() {
            fs::write(dir.join("design-trace.jsonl"), self.trace_jsonl())?;
        }
        Ok(())
    }
}
