//! Expert-level aggregation: a weighted per-pair vote over individual
//! estimates, projected onto a DAG.

use crate::error::{Error, Result};
use crate::graph::{canonical_pairs, Dag};
use crate::inference::EdgePosterior;
use crate::projection::{project_votes, PairVote, EDGE_THRESHOLD};

/// One expert's individual estimate.
#[derive(Debug, Clone)]
pub enum ExpertEstimate {
    Graph(Dag),
    Posterior(EdgePosterior),
}

impl ExpertEstimate {
    fn nodes(&self) -> &[String] {
        match self {
            ExpertEstimate::Graph(g) => g.nodes(),
            ExpertEstimate::Posterior(p) => p.nodes(),
        }
    }

    /// `(p_forward, p_none, p_backward)` for a canonical pair.
    fn triple(&self, u: usize, v: usize) -> [f64; 3] {
        match self {
            ExpertEstimate::Graph(g) => match g.relation(u, v).value() {
                1 => [1.0, 0.0, 0.0],
                -1 => [0.0, 0.0, 1.0],
                _ => [0.0, 1.0, 0.0],
            },
            ExpertEstimate::Posterior(p) => p.triple(u, v),
        }
    }
}

/// Vote shares `(forward, none, backward)` for one canonical pair.
pub type PairShares = ((usize, usize), [f64; 3]);

/// Per-pair vote shares `(forward, none, backward)` in canonical pair order.
pub fn vote_shares(
    estimates: &[ExpertEstimate],
    weights: Option<&[f64]>,
) -> Result<Vec<PairShares>> {
    let Some(first) = estimates.first() else {
        return Err(Error::AllZeroWeights);
    };
    let nodes = first.nodes();
    if estimates.iter().any(|e| e.nodes() != nodes) {
        return Err(Error::NodeSetMismatch);
    }
    let uniform = vec![1.0; estimates.len()];
    let weights = weights.unwrap_or(&uniform);
    if weights.len() != estimates.len() {
        return Err(Error::InvalidWeight(format!(
            "{} weights for {} experts",
            weights.len(),
            estimates.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidWeight(format!("{w}")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(canonical_pairs(nodes.len())
        .into_iter()
        .map(|(u, v)| {
            let mut share = [0.0; 3];
            for (e, &w) in estimates.iter().zip(weights) {
                if w == 0.0 {
                    continue;
                }
                let t = e.triple(u, v);
                for k in 0..3 {
                    share[k] += w * t[k] / total;
                }
            }
            ((u, v), share)
        })
        .collect())
}

pub fn aggregate_expert_level(
    estimates: &[ExpertEstimate],
    weights: Option<&[f64]>,
) -> Result<Dag> {
    let shares = vote_shares(estimates, weights)?;
    let votes: Vec<PairVote> = shares
        .into_iter()
        .map(|(pair, [f, _, b])| PairVote {
            pair,
            weight: f - b,
            confidence: f.max(b),
        })
        .collect();
    Ok(project_votes(estimates[0].nodes(), &votes, EDGE_THRESHOLD))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::asia_fixture;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn graph(edges: &[(usize, usize)]) -> ExpertEstimate {
        ExpertEstimate::Graph(Dag::from_indices(names(3), edges.iter().copied()).unwrap())
    }

    #[test]
    fn unanimity() {
        let g = asia_fixture();
        let all = vec![ExpertEstimate::Graph(g.clone()); 5];
        assert_eq!(aggregate_expert_level(&all, None).unwrap(), g);
    }

    #[test]
    fn majority_wins() {
        let est = vec![graph(&[(0, 1)]), graph(&[(0, 1)]), graph(&[(1, 0)])];
        let g = aggregate_expert_level(&est, None).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn degenerate_weights_pick_one_expert() {
        let est = vec![graph(&[(0, 1)]), graph(&[(1, 2)]), graph(&[(2, 0), (2, 1)])];
        let g = aggregate_expert_level(&est, Some(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(2, 0), (2, 1)]);
    }

    #[test]
    fn weight_errors() {
        let est = vec![graph(&[(0, 1)]), graph(&[])];
        assert_eq!(
            aggregate_expert_level(&est, Some(&[0.0, 0.0])).unwrap_err(),
            Error::AllZeroWeights
        );
        assert!(matches!(
            aggregate_expert_level(&est, Some(&[-1.0, 2.0])),
            Err(Error::InvalidWeight(_))
        ));
        let other = ExpertEstimate::Graph(Dag::empty(&["p", "q", "r"]).unwrap());
        assert_eq!(
            aggregate_expert_level(&[graph(&[]), other], None).unwrap_err(),
            Error::NodeSetMismatch
        );
    }

    #[test]
    fn duplication_and_permutation_invariant() {
        let est = vec![graph(&[(0, 1)]), graph(&[(0, 1), (1, 2)]), graph(&[(2, 1)])];
        let base = aggregate_expert_level(&est, None).unwrap();
        let doubled: Vec<_> = est.iter().chain(est.iter()).cloned().collect();
        assert_eq!(aggregate_expert_level(&doubled, None).unwrap(), base);
        let rev: Vec<_> = est.iter().rev().cloned().collect();
        assert_eq!(aggregate_expert_level(&rev, None).unwrap(), base);
    }
}
