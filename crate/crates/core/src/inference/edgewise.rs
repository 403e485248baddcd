use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::Result;
use crate::expert::{KnowledgeSet, Protocol};
use crate::graph::{canonical_pairs, Dag};
use crate::projection::{project_votes, PairVote, EDGE_THRESHOLD};

/// Dirichlet pseudo-counts over (forward, none, backward).
pub const DEFAULT_PSEUDOCOUNTS: [f64; 3] = [1.0, 1.0, 1.0];

/// Per-pair Dirichlet-categorical posterior over the three edge-wise
/// outcomes of each canonical pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePosterior {
    nodes: Vec<String>,
    prior: [f64; 3],
    counts: BTreeMap<(usize, usize), [f64; 3]>,
}

fn slot(value: i32) -> usize {
    match value.signum() {
        1 => 0,
        0 => 1,
        _ => 2,
    }
}

impl EdgePosterior {
    pub fn new(nodes: Vec<String>, prior: [f64; 3]) -> Self {
        assert!(
            prior.iter().all(|&a| a > 0.0),
            "pseudo-counts must be positive"
        );
        EdgePosterior {
            nodes,
            prior,
            counts: BTreeMap::new(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn prior(&self) -> [f64; 3] {
        self.prior
    }

    /// Adds one answer on the canonical pair `(u, v)` with the given weight.
    pub fn observe(&mut self, u: usize, v: usize, value: i32, weight: f64) {
        debug_assert!(u < v);
        self.counts.entry((u, v)).or_insert([0.0; 3])[slot(value)] += weight;
    }

    /// Dirichlet concentration of the pair.
    pub fn alpha(&self, u: usize, v: usize) -> [f64; 3] {
        let c = self.counts.get(&(u, v)).copied().unwrap_or([0.0; 3]);
        [
            self.prior[0] + c[0],
            self.prior[1] + c[1],
            self.prior[2] + c[2],
        ]
    }

    /// Posterior mean `(p_forward, p_none, p_backward)`.
    pub fn triple(&self, u: usize, v: usize) -> [f64; 3] {
        let a = self.alpha(u, v);
        let s = a[0] + a[1] + a[2];
        [a[0] / s, a[1] / s, a[2] / s]
    }

    pub fn observations(&self, u: usize, v: usize) -> f64 {
        self.counts.get(&(u, v)).map_or(0.0, |c| c.iter().sum())
    }

    pub fn votes(&self) -> Vec<PairVote> {
        canonical_pairs(self.nodes.len())
            .into_iter()
            .map(|(u, v)| {
                let [f, _, b] = self.triple(u, v);
                PairVote {
                    pair: (u, v),
                    weight: f - b,
                    confidence: f.max(b),
                }
            })
            .collect()
    }

    pub fn map_dag(&self) -> Dag {
        project_votes(&self.nodes, &self.votes(), EDGE_THRESHOLD)
    }

    /// Mutual information between the next answer on `(u, v)` and the
    /// pair's categorical parameter.
    pub fn expected_information_gain(&self, u: usize, v: usize) -> f64 {
        dirichlet_eig(self.alpha(u, v))
    }

    /// Summed entropy of the posterior predictive over all pairs.
    pub fn predictive_entropy(&self) -> f64 {
        canonical_pairs(self.nodes.len())
            .into_iter()
            .map(|(u, v)| categorical_entropy(&self.triple(u, v)))
            .sum()
    }

    pub fn dump(&self) -> Vec<PairProbabilities> {
        canonical_pairs(self.nodes.len())
            .into_iter()
            .map(|(u, v)| {
                let [f, n, b] = self.triple(u, v);
                PairProbabilities {
                    u: self.nodes[u].clone(),
                    v: self.nodes[v].clone(),
                    p_forward: f,
                    p_none: n,
                    p_backward: b,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProbabilities {
    pub u: String,
    pub v: String,
    pub p_forward: f64,
    pub p_none: f64,
    pub p_backward: f64,
}

pub fn categorical_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// `H(E[theta]) - E[H(theta)]` for `theta ~ Dirichlet(alpha)`.
pub fn dirichlet_eig(alpha: [f64; 3]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mean = alpha.map(|a| a / total);
    let expected_entropy: f64 = digamma(total + 1.0)
        - alpha
            .iter()
            .map(|&a| a / total * digamma(a + 1.0))
            .sum::<f64>();
    (categorical_entropy(&mean) - expected_entropy).max(0.0)
}

/// Conjugate update of every pair from an edge-wise knowledge set, then
/// projection of the posterior means onto a DAG.
pub fn infer_edgewise(
    d: &KnowledgeSet,
    nodes: &[String],
    prior: [f64; 3],
) -> Result<(EdgePosterior, Dag)> {
    d.require_protocol(Protocol::EdgeWise)?;
    let mut post = EdgePosterior::new(nodes.to_vec(), prior);
    for (u, v, y) in d.indexed_in(nodes)? {
        post.observe(u, v, y, 1.0);
    }
    let dag = post.map_dag();
    Ok((post, dag))
}
