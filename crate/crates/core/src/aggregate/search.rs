//! Penalized-likelihood hill climbing over DAGs, with the mixture fit as
//! the per-graph likelihood.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixture::{em_fit, MixtureData, MixtureParams};
use super::vote::{aggregate_expert_level, ExpertEstimate};
use crate::error::{Error, Result};
use crate::expert::{KnowledgeSet, Protocol};
use crate::graph::{canonical_pairs, find_cycle, Dag};
use crate::inference::{infer_edgewise, DEFAULT_PSEUDOCOUNTS};
use crate::projection::project_to_dag;

pub const DEFAULT_RESTARTS: usize = 2;
const MIN_IMPROVEMENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Delete,
    Reverse,
    Add,
}

/// One structural edit: `kind` applied to the edge `from -> to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Move {
    pub kind: MoveKind,
    pub from: usize,
    pub to: usize,
}

impl Move {
    fn sort_key(&self) -> (MoveKind, (usize, usize), usize) {
        (
            self.kind,
            (self.from.min(self.to), self.from.max(self.to)),
            self.from,
        )
    }

    fn apply(&self, g: &Dag) -> Option<Dag> {
        let mut edges: Vec<(usize, usize)> =
            g.edges().filter(|&e| e != (self.from, self.to)).collect();
        match self.kind {
            MoveKind::Delete => {}
            MoveKind::Reverse => edges.push((self.to, self.from)),
            MoveKind::Add => edges.push((self.from, self.to)),
        }
        if find_cycle(g.n(), edges.iter().copied()).is_some() {
            return None;
        }
        g.with_edges(edges).ok()
    }
}

fn candidate_moves(g: &Dag) -> Vec<Move> {
    let mut moves = Vec::new();
    for (from, to) in g.edges() {
        moves.push(Move {
            kind: MoveKind::Delete,
            from,
            to,
        });
        moves.push(Move {
            kind: MoveKind::Reverse,
            from,
            to,
        });
    }
    for (u, v) in canonical_pairs(g.n()) {
        if !g.has_edge(u, v) && !g.has_edge(v, u) {
            moves.push(Move {
                kind: MoveKind::Add,
                from: u,
                to: v,
            });
            moves.push(Move {
                kind: MoveKind::Add,
                from: v,
                to: u,
            });
        }
    }
    moves.sort_by_key(Move::sort_key);
    moves
}

/// A scored candidate graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateState {
    pub graph: Dag,
    /// Mixture log-likelihood minus the edge penalty.
    pub score: f64,
    pub log_likelihood: f64,
    pub params: MixtureParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub restart: usize,
    pub kind: MoveKind,
    pub from: String,
    pub to: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: CandidateState,
    pub best_restart: usize,
    pub moves: Vec<MoveRecord>,
    pub penalty: f64,
}

/// JSON fit report of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub protocol: Protocol,
    pub edges: Vec<[String; 2]>,
    pub score: f64,
    pub log_likelihood: f64,
    pub penalty_per_edge: f64,
    pub reliability: BTreeMap<String, f64>,
    pub params: MixtureParams,
    pub best_restart: usize,
    pub moves: Vec<MoveRecord>,
}

impl SearchOutcome {
    pub fn report(&self) -> FitReport {
        FitReport {
            protocol: self.best.params.protocol,
            edges: self
                .best
                .graph
                .edge_names()
                .into_iter()
                .map(|(a, b)| [a, b])
                .collect(),
            score: self.best.score,
            log_likelihood: self.best.log_likelihood,
            penalty_per_edge: self.penalty,
            reliability: self.best.params.reliability.clone(),
            params: self.best.params.clone(),
            best_restart: self.best_restart,
            moves: self.moves.clone(),
        }
    }
}

/// Edge penalty for a data set of `total` responses.
pub fn edge_penalty(total: usize) -> f64 {
    0.5 * (total.max(1) as f64).ln()
}

/// Memoized penalized scores for one data set.
pub struct Scorer<'a> {
    data: &'a MixtureData,
    penalty: f64,
    cache: Mutex<HashMap<Dag, CandidateState>>,
}

impl<'a> Scorer<'a> {
    pub fn new(data: &'a MixtureData) -> Self {
        Scorer {
            data,
            penalty: edge_penalty(data.len()),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn score(&self, g: &Dag) -> Result<CandidateState> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(g) {
            return Ok(hit.clone());
        }
        let fit = em_fit(self.data, g)?;
        let state = CandidateState {
            graph: g.clone(),
            score: fit.log_likelihood - self.penalty * g.edge_count() as f64,
            log_likelihood: fit.log_likelihood,
            params: fit.params,
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(g.clone(), state.clone());
        Ok(state)
    }

    fn climb(
        &self,
        init: &Dag,
        restart: usize,
        trace: &mut Vec<MoveRecord>,
    ) -> Result<CandidateState> {
        let mut current = self.score(init)?;
        loop {
            let moves = candidate_moves(&current.graph);
            let scored: Vec<Option<(Move, CandidateState)>> = moves
                .par_iter()
                .map(|m| {
                    m.apply(&current.graph)
                        .map(|g| self.score(&g).map(|s| (*m, s)))
                        .transpose()
                })
                .collect::<Result<_>>()?;
            let mut best: Option<(Move, CandidateState)> = None;
            for (m, s) in scored.into_iter().flatten() {
                let bar = best
                    .as_ref()
                    .map_or(current.score + MIN_IMPROVEMENT, |(_, b)| {
                        b.score + MIN_IMPROVEMENT
                    });
                if s.score > bar {
                    best = Some((m, s));
                }
            }
            let Some((m, next)) = best else {
                return Ok(current);
            };
            let nodes = current.graph.nodes();
            trace.push(MoveRecord {
                restart,
                kind: m.kind,
                from: nodes[m.from].clone(),
                to: nodes[m.to].clone(),
                score: next.score,
            });
            current = next;
        }
    }
}

/// Graph that orients every pair along `order` whenever the pooled
/// responses lean that way.
fn order_consistent_graph(data: &MixtureData, order: &[usize]) -> Result<Dag> {
    let n = data.nodes().len();
    let mut pooled = vec![vec![0i64; n]; n];
    for &(_, u, v, y) in data.observations() {
        pooled[u][v] += y as i64;
        pooled[v][u] -= y as i64;
    }
    let mut edges = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if pooled[a][b] > 0 {
                edges.push((a, b));
            }
        }
    }
    Dag::from_indices(data.nodes().to_vec(), edges)
}

/// Hill climbing from `init` and from `restarts - 1` seeded random
/// orderings; the best final state wins, earlier restarts on ties.
pub fn structure_search(
    data: &MixtureData,
    init: &Dag,
    restarts: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyResponses);
    }
    if init.nodes() != data.nodes() {
        return Err(Error::NodeSetMismatch);
    }
    let scorer = Scorer::new(data);
    let mut moves = Vec::new();
    let mut best: Option<(usize, CandidateState)> = None;
    for r in 0..restarts.max(1) {
        let start = if r == 0 {
            init.clone()
        } else {
            let mut order: Vec<usize> = (0..init.n()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64)));
            order_consistent_graph(data, &order)?
        };
        let state = scorer.climb(&start, r, &mut moves)?;
        if best
            .as_ref()
            .is_none_or(|(_, b)| state.score > b.score + MIN_IMPROVEMENT)
        {
            best = Some((r, state));
        }
    }
    let (best_restart, best) = best.expect("at least one restart");
    Ok(SearchOutcome {
        best,
        best_restart,
        moves,
        penalty: scorer.penalty(),
    })
}

/// Individual MAP graph of each expert, in expert-id order.
pub fn per_expert_graphs(d: &KnowledgeSet, nodes: &[String]) -> Result<Vec<Dag>> {
    let protocol = d.protocol().ok_or(Error::EmptyResponses)?;
    d.require_protocol(protocol)?;
    d.by_expert()
        .values()
        .map(|dm| match protocol {
            Protocol::EdgeWise => Ok(infer_edgewise(dm, nodes, DEFAULT_PSEUDOCOUNTS)?.1),
            Protocol::OrderingWise => ordering_graph(dm, nodes),
        })
        .collect()
}

/// Mean answer per pair scaled to `[-1, 1]`, projected and reduced to its
/// direct edges.
pub fn ordering_graph(d: &KnowledgeSet, nodes: &[String]) -> Result<Dag> {
    let mut sums: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (u, v, y) in d.indexed_in(nodes)? {
        let e = sums.entry((u, v)).or_default();
        e.0 += y as f64 / 10.0;
        e.1 += 1.0;
    }
    let weights = sums.into_iter().map(|(k, (s, c))| (k, s / c)).collect();
    Ok(project_to_dag(nodes, &weights).transitive_reduction())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryLevelConfig {
    pub restarts: usize,
    pub seed: u64,
}

impl Default for QueryLevelConfig {
    fn default() -> Self {
        QueryLevelConfig {
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

/// Full pipeline: expert-level vote of individual MAP graphs as the
/// starting point, then structure search on all raw responses.
pub fn query_level_search(
    d: &KnowledgeSet,
    nodes: &[String],
    config: QueryLevelConfig,
) -> Result<SearchOutcome> {
    let data = MixtureData::new(d, nodes)?;
    let estimates: Vec<ExpertEstimate> = per_expert_graphs(d, nodes)?
        .into_iter()
        .map(ExpertEstimate::Graph)
        .collect();
    let init = aggregate_expert_level(&estimates, None)?;
    structure_search(&data, &init, config.restarts, config.seed)
}

pub fn query_level_aggregate(d: &KnowledgeSet, nodes: &[String]) -> Result<Dag> {
    Ok(query_level_search(d, nodes, QueryLevelConfig::default())?
        .best
        .graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{all_queries, make_profile, Archetype, Query, Response, SimulatedExpert};
    use crate::graph::{asia_fixture, shd};

    #[test]
    fn omniscient_from_empty_init() {
        let truth = asia_fixture();
        let mut e = SimulatedExpert::new("o", make_profile(Archetype::Omniscient), &truth, 3);
        let d = e
            .answer_all(&all_queries(&truth), Protocol::EdgeWise)
            .unwrap();
        let data = MixtureData::new(&d, truth.nodes()).unwrap();
        let out = structure_search(&data, &Dag::empty(truth.nodes()).unwrap(), 1, 0).unwrap();
        assert_eq!(shd(&out.best.graph, &truth).unwrap(), 0);
    }

    #[test]
    fn silence_gives_empty_graph() {
        let nodes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let d: KnowledgeSet = ["a", "b"]
            .iter()
            .flat_map(|u| ["c"].iter().map(move |v| (*u, *v)))
            .chain([("a", "b")])
            .flat_map(|(u, v)| {
                (0..3).map(move |m| {
                    Response::new(
                        format!("e{m}"),
                        Query::new(u, v).unwrap(),
                        Protocol::OrderingWise,
                        0,
                    )
                    .unwrap()
                })
            })
            .collect();
        let data = MixtureData::new(&d, &nodes).unwrap();
        let full = Dag::from_indices(nodes.clone(), [(0, 1), (1, 2), (0, 2)]).unwrap();
        let out = structure_search(&data, &full, 2, 0).unwrap();
        assert_eq!(out.best.graph.edge_count(), 0);
    }

    #[test]
    fn score_never_below_init() {
        let truth = asia_fixture();
        let mut d = KnowledgeSet::default();
        for i in 0..4 {
            let mut e = SimulatedExpert::new(
                format!("e{i}"),
                make_profile(Archetype::Imperfect),
                &truth,
                i,
            );
            d.extend(
                e.answer_all(&all_queries(&truth), Protocol::OrderingWise)
                    .unwrap(),
            );
        }
        let data = MixtureData::new(&d, truth.nodes()).unwrap();
        let scorer = Scorer::new(&data);
        let init = Dag::empty(truth.nodes()).unwrap();
        let out = structure_search(&data, &init, 2, 7).unwrap();
        assert!(out.best.score >= scorer.score(&init).unwrap().score);
        assert!(out.best.score.is_finite());
    }

    #[test]
    fn omniscient_crowd_ordering() {
        let truth = asia_fixture();
        let mut d = KnowledgeSet::default();
        for i in 0..20 {
            let mut e = SimulatedExpert::new(
                format!("o{i:02}"),
                make_profile(Archetype::Omniscient),
                &truth,
                i,
            );
            d.extend(
                e.answer_all(&all_queries(&truth), Protocol::OrderingWise)
                    .unwrap(),
            );
        }
        assert_eq!(query_level_aggregate(&d, truth.nodes()).unwrap(), truth);
    }

    #[test]
    fn moves_are_ordered_delete_reverse_add() {
        let g = Dag::from_indices(vec!["a".into(), "b".into(), "c".into()], [(0, 1)]).unwrap();
        let kinds: Vec<MoveKind> = candidate_moves(&g).iter().map(|m| m.kind).collect();
        assert_eq!(kinds[..2], [MoveKind::Delete, MoveKind::Reverse]);
        assert!(kinds[2..].iter().all(|k| *k == MoveKind::Add));
    }
}
