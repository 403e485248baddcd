//! Budgeted, staged selection of which pairs to ask next.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{ordering_graph, query_level_aggregate};
use crate::error::{Error, Result};
use crate::expert::{elicit, KnowledgeSet, Protocol, Query, SimulatedExpert};
use crate::graph::{canonical_pairs, Dag};
use crate::inference::ordering::{infer_scores_indexed, ordering_observations, SCORE_SCALE};
use crate::inference::{infer_edgewise, EdgePosterior, ScoreModelConfig, DEFAULT_PSEUDOCOUNTS};
use crate::metrics::edge_metrics;

const EIGEN_CLIP: f64 = 1e-10;
const TIE: f64 = 1e-12;

pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[serde(rename = "eopt")]
    EOptimality,
    Eig,
    Random,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eopt" | "e-opt" | "e_optimality" | "eoptimality" => Ok(Criterion::EOptimality),
            "eig" => Ok(Criterion::Eig),
            "random" | "uniform" => Ok(Criterion::Random),
            other => Err(Error::InvalidValue(format!(
                "unknown design criterion `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::EOptimality => "eopt",
            Criterion::Eig => "eig",
            Criterion::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Asked pairs leave the pool.
    Remove,
    /// Every pair stays available in every stage.
    Fixed,
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "remove" => Ok(PoolMode::Remove),
            "fixed" => Ok(PoolMode::Fixed),
            other => Err(Error::InvalidValue(format!("unknown pool mode `{other}`"))),
        }
    }
}

/// Weighted Laplacian `sum w (e_u - e_v)(e_u - e_v)^T` of the comparison graph.
pub fn information_matrix(n: usize, design: &[(Pair, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &((u, v), w) in design {
        m[(u, u)] += w;
        m[(v, v)] += w;
        m[(u, v)] -= w;
        m[(v, u)] -= w;
    }
    m
}

/// Information matrix over named pairs, all with weight `w`.
pub fn information_matrix_named<S: AsRef<str>>(
    nodes: &[String],
    pairs: &[(S, S)],
    w: f64,
) -> Result<DMatrix<f64>> {
    let index = |name: &str| {
        nodes
            .iter()
            .position(|x| x == name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    };
    let design = pairs
        .iter()
        .map(|(a, b)| Ok(((index(a.as_ref())?, index(b.as_ref())?), w)))
        .collect::<Result<Vec<_>>>()?;
    Ok(information_matrix(nodes.len(), &design))
}

/// Second-smallest eigenvalue of a Laplacian, clipped to zero below `1e-10`.
pub fn e_optimality(information: &DMatrix<f64>) -> f64 {
    if information.nrows() < 2 {
        return 0.0;
    }
    let mut values: Vec<f64> = SymmetricEigen::new(information.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    values.sort_by(f64::total_cmp);
    if values[1] < EIGEN_CLIP {
        0.0
    } else {
        values[1]
    }
}

/// Number of connected components of the comparison graph of `design`.
pub fn components(n: usize, design: &[(Pair, f64)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut count = n;
    for &((u, v), w) in design {
        if w <= 0.0 {
            continue;
        }
        let (a, b) = (root(&mut parent, u), root(&mut parent, v));
        if a != b {
            parent[a] = b;
            count -= 1;
        }
    }
    count
}

/// Gaussian belief over latent scores with a linear observation model
/// `y = phi[u] - phi[v] + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub noise_var: f64,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, noise_var: f64) -> Self {
        GaussianBelief {
            mean,
            covariance,
            noise_var,
        }
    }

    /// Independent prior of variance `prior_var` on every score.
    pub fn isotropic(n: usize, prior_var: f64, noise_var: f64) -> Self {
        Self::new(
            DVector::zeros(n),
            DMatrix::identity(n, n) * prior_var,
            noise_var,
        )
    }

    /// Laplace-style belief at `mean`: precision is the prior precision plus
    /// the information of every answered pair divided by the noise variance.
    pub fn from_answers(
        mean: DVector<f64>,
        answered: &[Pair],
        prior_var: f64,
        noise_var: f64,
    ) -> Self {
        let n = mean.len();
        let design: Vec<(Pair, f64)> = answered.iter().map(|&p| (p, 1.0)).collect();
        let precision =
            DMatrix::identity(n, n) / prior_var + information_matrix(n, &design) / noise_var;
        let covariance = precision
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::identity(n, n) * prior_var);
        Self::new(mean, covariance, noise_var)
    }

    /// `d^T Sigma d` for `d = e_u - e_v`.
    pub fn pair_variance(&self, u: usize, v: usize) -> f64 {
        let c = &self.covariance;
        (c[(u, u)] + c[(v, v)] - c[(u, v)] - c[(v, u)]).max(0.0)
    }

    /// Covariance after observing one answer on `(u, v)`; the mean needs the
    /// answer and is left unchanged.
    pub fn condition(&mut self, u: usize, v: usize) {
        let s = self.pair_variance(u, v) + self.noise_var;
        if s <= 0.0 {
            return;
        }
        let k: DVector<f64> = self.covariance.column(u) - self.covariance.column(v);
        self.covariance -= &k * k.transpose() / s;
    }

    /// Kalman update with answer `y` on `(u, v)` in score units.
    pub fn observe(&mut self, u: usize, v: usize, y: f64) {
        let s = self.pair_variance(u, v) + self.noise_var;
        if s <= 0.0 {
            return;
        }
        let k: DVector<f64> = self.covariance.column(u) - self.covariance.column(v);
        let residual = y - (self.mean[u] - self.mean[v]);
        self.mean += &k * (residual / s);
        self.covariance -= &k * k.transpose() / s;
    }

    pub fn entropy(&self) -> f64 {
        let n = self.mean.len() as f64;
        let det = self.covariance.determinant().max(f64::MIN_POSITIVE);
        0.5 * (n * (1.0 + (2.0 * std::f64::consts::PI).ln()) + det.ln())
    }
}

/// Expected entropy reduction from one answer on `(u, v)`:
/// `0.5 * ln(1 + d^T Sigma d / noise)`.
pub fn eig_gain(belief: &GaussianBelief, u: usize, v: usize) -> f64 {
    let dsd = belief.pair_variance(u, v);
    if dsd <= 0.0 {
        return 0.0;
    }
    0.5 * (dsd / belief.noise_var).ln_1p()
}

/// The belief a stage is planned against.
#[derive(Debug, Clone)]
pub enum StageBelief {
    Gaussian(GaussianBelief),
    Dirichlet(EdgePosterior),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDesign {
    pub stage: usize,
    pub budget: usize,
    /// Chosen pairs in selection order.
    pub queries: Vec<Pair>,
    /// Selection mask over the pool, in pool order.
    pub mask: Vec<bool>,
    /// Criterion value credited to each chosen pair.
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDesign {
    pub stages: Vec<StageDesign>,
    pub total: usize,
}

impl AggregatedDesign {
    pub fn new(stages: Vec<StageDesign>) -> Self {
        let total = stages.iter().map(|s| s.budget).sum();
        AggregatedDesign { stages, total }
    }

    /// Stage weights `K_t / K`.
    pub fn weights(&self) -> Vec<f64> {
        self.stages
            .iter()
            .map(|s| s.budget as f64 / self.total as f64)
            .collect()
    }

    /// Budget share of every pair across stages.
    pub fn pair_weights(&self) -> BTreeMap<Pair, f64> {
        let mut out = BTreeMap::new();
        for s in &self.stages {
            for q in &s.queries {
                *out.entry(*q).or_insert(0.0) += 1.0 / self.total as f64;
            }
        }
        out
    }
}

/// Inputs a stage selection needs besides the pool.
#[derive(Debug, Clone)]
pub struct StageContext<'a> {
    pub stage: usize,
    pub n: usize,
    /// Pairs already asked, with their information weights.
    pub history: &'a [(Pair, f64)],
    /// Information weight of a newly asked pair.
    pub weight: f64,
    pub belief: Option<&'a StageBelief>,
    pub seed: u64,
}

/// Greedy forward selection of `budget` distinct pairs from `pool`.
pub fn select_stage(
    pool: &[Pair],
    budget: usize,
    criterion: Criterion,
    ctx: &StageContext,
) -> Result<StageDesign> {
    if budget == 0 {
        return Err(Error::ZeroBudget);
    }
    if budget > pool.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: pool.len(),
        });
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(budget);
    let mut gains = Vec::with_capacity(budget);
    match criterion {
        Criterion::Random => {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.seed));
            chosen.extend(idx.into_iter().take(budget));
            gains.resize(budget, 0.0);
        }
        Criterion::EOptimality => {
            let mut design: Vec<(Pair, f64)> = ctx.history.to_vec();
            let mut current = e_optimality(&information_matrix(ctx.n, &design));
            for _ in 0..budget {
                // key: (lambda1, -components, trace increase); earliest pool index wins ties
                let mut best: Option<(usize, f64, usize, f64)> = None;
                for (i, &pair) in pool.iter().enumerate() {
                    if chosen.contains(&i) {
                        continue;
                    }
                    design.push((pair, ctx.weight));
                    let lambda = e_optimality(&information_matrix(ctx.n, &design));
                    let comps = components(ctx.n, &design);
                    design.pop();
                    let trace_gain = 2.0 * ctx.weight;
                    let better = match best {
                        None => true,
                        Some((_, bl, bc, bt)) => {
                            if (lambda - bl).abs() > TIE {
                                lambda > bl
                            } else if comps != bc {
                                comps < bc
                            } else {
                                trace_gain > bt + TIE
                            }
                        }
                    };
                    if better {
                        best = Some((i, lambda, comps, trace_gain));
                    }
                }
                let (i, lambda, _, _) = best.expect("pool has an unchosen pair");
                design.push((pool[i], ctx.weight));
                chosen.push(i);
                gains.push(lambda - current);
                current = lambda;
            }
        }
        Criterion::Eig => match ctx.belief {
            Some(StageBelief::Gaussian(belief)) => {
                let mut belief = belief.clone();
                for _ in 0..budget {
                    let (i, gain) =
                        argmax_unchosen(pool, &chosen, |(u, v)| eig_gain(&belief, u, v));
                    belief.condition(pool[i].0, pool[i].1);
                    chosen.push(i);
                    gains.push(gain);
                }
            }
            Some(StageBelief::Dirichlet(posterior)) => {
                for _ in 0..budget {
                    let (i, gain) = argmax_unchosen(pool, &chosen, |(u, v)| {
                        posterior.expected_information_gain(u, v)
                    });
                    chosen.push(i);
                    gains.push(gain);
                }
            }
            None => return Err(Error::InvalidValue("EIG selection needs a belief".into())),
        },
    }
    let mut mask = vec![false; pool.len()];
    for &i in &chosen {
        mask[i] = true;
    }
    Ok(StageDesign {
        stage: ctx.stage,
        budget,
        queries: chosen.iter().map(|&i| pool[i]).collect(),
        mask,
        gains,
    })
}

fn argmax_unchosen(pool: &[Pair], chosen: &[usize], score: impl Fn(Pair) -> f64) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (i, &pair) in pool.iter().enumerate() {
        if chosen.contains(&i) {
            continue;
        }
        let g = score(pair);
        if best.is_none_or(|(_, b)| g > b + TIE) {
            best = Some((i, g));
        }
    }
    best.expect("pool has an unchosen pair")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    pub stages: Vec<usize>,
    pub criterion: Criterion,
    pub protocol: Protocol,
    pub pool_mode: PoolMode,
    pub seed: u64,
}

/// One line of the design trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub t: usize,
    #[serde(rename = "K_t")]
    pub budget: usize,
    pub chosen: Vec<[String; 2]>,
    pub criterion_values: Vec<f64>,
    pub lambda1: f64,
    pub shd: usize,
    pub edge_precision: f64,
    pub edge_recall: f64,
}

#[derive(Debug, Clone)]
pub struct SequentialOutcome {
    pub design: AggregatedDesign,
    pub estimate: Dag,
    pub responses: KnowledgeSet,
    pub trace: Vec<StageRecord>,
}

impl SequentialOutcome {
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

/// State of knowledge after some answers.
struct Fitted {
    estimate: Dag,
    belief: StageBelief,
    /// Information weight of the next answer.
    weight: f64,
}

fn fit(
    responses: &KnowledgeSet,
    nodes: &[String],
    protocol: Protocol,
    experts: usize,
) -> Result<Fitted> {
    let n = nodes.len();
    let prior_var = ScoreModelConfig::default().prior_scale.powi(2);
    if responses.is_empty() {
        let belief = match protocol {
            Protocol::EdgeWise => {
                StageBelief::Dirichlet(EdgePosterior::new(nodes.to_vec(), DEFAULT_PSEUDOCOUNTS))
            }
            Protocol::OrderingWise => {
                StageBelief::Gaussian(GaussianBelief::isotropic(n, prior_var, 1.0 / SCORE_SCALE))
            }
        };
        return Ok(Fitted {
            estimate: Dag::empty(nodes)?,
            belief,
            weight: 1.0,
        });
    }
    let estimate = if experts > 1 {
        query_level_aggregate(responses, nodes)?
    } else {
        match protocol {
            Protocol::EdgeWise => infer_edgewise(responses, nodes, DEFAULT_PSEUDOCOUNTS)?.1,
            Protocol::OrderingWise => ordering_graph(responses, nodes)?,
        }
    };
    match protocol {
        Protocol::EdgeWise => {
            let (posterior, _) = infer_edgewise(responses, nodes, DEFAULT_PSEUDOCOUNTS)?;
            Ok(Fitted {
                estimate,
                belief: StageBelief::Dirichlet(posterior),
                weight: 1.0,
            })
        }
        Protocol::OrderingWise => {
            let obs = ordering_observations(responses, nodes)?;
            let (field, _) = infer_scores_indexed(nodes, &obs, &ScoreModelConfig::default())?;
            let noise_var = (field.sigma / SCORE_SCALE).powi(2);
            let answered: Vec<Pair> = obs.iter().map(|&(u, v, _)| (u, v)).collect();
            let belief = GaussianBelief::from_answers(
                DVector::from_vec(field.phi.clone()),
                &answered,
                prior_var,
                noise_var,
            );
            Ok(Fitted {
                estimate,
                belief: StageBelief::Gaussian(belief),
                weight: 1.0 / noise_var,
            })
        }
    }
}

/// Staged elicitation: plan a stage, ask every expert, refit, update the
/// pool, and repeat.
pub fn run_sequential(
    experts: &mut [SimulatedExpert],
    truth: &Dag,
    config: &SequentialConfig,
) -> Result<SequentialOutcome> {
    if experts.is_empty() {
        return Err(Error::EmptyResponses);
    }
    if config.stages.is_empty() {
        return Err(Error::ZeroBudget);
    }
    let nodes = truth.nodes();
    let n = nodes.len();
    let mut pool: Vec<Pair> = canonical_pairs(n);
    let mut responses = KnowledgeSet::default();
    let mut history: Vec<(Pair, f64)> = Vec::new();
    let mut stages = Vec::new();
    let mut trace = Vec::new();
    let mut state = fit(&responses, nodes, config.protocol, experts.len())?;

    for (t, &budget) in config.stages.iter().enumerate() {
        let ctx = StageContext {
            stage: t,
            n,
            history: &history,
            weight: state.weight,
            belief: Some(&state.belief),
            seed: config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(t as u64),
        };
        let stage = select_stage(&pool, budget, config.criterion, &ctx)?;
        let queries: Vec<Query> = stage
            .queries
            .iter()
            .map(|&(u, v)| Query::new(nodes[u].clone(), nodes[v].clone()))
            .collect::<Result<_>>()?;
        responses.extend(elicit(experts, &queries, config.protocol)?);
        history.extend(stage.queries.iter().map(|&p| (p, state.weight)));
        if config.pool_mode == PoolMode::Remove {
            pool.retain(|p| !stage.queries.contains(p));
        }
        state = fit(&responses, nodes, config.protocol, experts.len())?;
        let m = edge_metrics(&state.estimate, truth)?;
        trace.push(StageRecord {
            t,
            budget,
            chosen: stage
                .queries
                .iter()
                .map(|&(u, v)| [nodes[u].clone(), nodes[v].clone()])
                .collect(),
            criterion_values: stage.gains.clone(),
            lambda1: e_optimality(&information_matrix(n, &history)),
            shd: m.shd,
            edge_precision: m.edge_precision,
            edge_recall: m.edge_recall,
        });
        stages.push(stage);
    }
    Ok(SequentialOutcome {
        design: AggregatedDesign::new(stages),
        estimate: state.estimate,
        responses,
        trace,
    })
}
