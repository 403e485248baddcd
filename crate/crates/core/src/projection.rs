//! Mapping signed pairwise confidences onto an acyclic structure.

use std::collections::BTreeMap;

use crate::graph::Dag;

/// Default confidence an edge must reach to be placed.
pub const EDGE_THRESHOLD: f64 = 0.5;

/// Signed support for a canonical pair `(u, v)`: positive `weight` favors
/// `u -> v`, negative favors `v -> u`. `confidence` is compared against the
/// inclusion threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairVote {
    pub pair: (usize, usize),
    pub weight: f64,
    pub confidence: f64,
}

/// Greedy insertion in descending `|weight|` (ties by pair order), keeping
/// only votes at or above `threshold` and skipping edges that close a cycle.
pub fn project_votes(nodes: &[String], votes: &[PairVote], threshold: f64) -> Dag {
    let n = nodes.len();
    let mut candidates: Vec<&PairVote> = votes
        .iter()
        .filter(|v| v.weight != 0.0 && v.weight.is_finite() && v.confidence >= threshold - 1e-12)
        .collect();
    candidates.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then_with(|| a.pair.cmp(&b.pair))
    });

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut placed = Vec::new();
    for vote in candidates {
        let (a, b) = vote.pair;
        let (from, to) = if vote.weight > 0.0 { (a, b) } else { (b, a) };
        if from == to || from >= n || to >= n || reaches(&children, to, from) {
            continue;
        }
        children[from].push(to);
        placed.push((from, to));
    }
    Dag::from_indices(nodes.to_vec(), placed).expect("greedy insertion keeps the graph acyclic")
}

/// Projection of plain signed weights, using `|weight|` as the confidence.
pub fn project_to_dag(nodes: &[String], weights: &BTreeMap<(usize, usize), f64>) -> Dag {
    let votes: Vec<PairVote> = weights
        .iter()
        .map(|(&pair, &weight)| PairVote {
            pair,
            weight,
            confidence: weight.abs(),
        })
        .collect();
    project_votes(nodes, &votes, EDGE_THRESHOLD)
}

fn reaches(children: &[Vec<usize>], src: usize, dst: usize) -> bool {
    if src == dst {
        return true;
    }
    let mut seen = vec![false; children.len()];
    let mut stack = vec![src];
    seen[src] = true;
    while let Some(u) = stack.pop() {
        for &c in &children[u] {
            if c == dst {
                return true;
            }
            if !seen[c] {
                seen[c] = true;
                stack.push(c);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::asia_fixture;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn reproduces_asia_from_unit_weights() {
        let g = asia_fixture();
        let weights: BTreeMap<_, _> = crate::graph::canonical_pairs(g.n())
            .into_iter()
            .map(|(u, v)| ((u, v), g.relation(u, v).value() as f64))
            .collect();
        assert_eq!(project_to_dag(g.nodes(), &weights), g);
    }

    #[test]
    fn drops_weakest_edge_of_a_cycle() {
        // x0 -> x1 (0.9), x1 -> x2 (0.8), x2 -> x0 (0.7, stored on (0,2) as negative)
        let weights = BTreeMap::from([((0, 1), 0.9), ((1, 2), 0.8), ((0, 2), -0.7)]);
        let g = project_to_dag(&names(3), &weights);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn below_threshold_is_empty() {
        let weights = BTreeMap::from([((0, 1), 0.49), ((1, 2), -0.3)]);
        assert_eq!(project_to_dag(&names(3), &weights).edge_count(), 0);
    }

    #[test]
    fn ties_follow_pair_order() {
        let weights = BTreeMap::from([((0, 1), 1.0), ((1, 2), 1.0), ((0, 2), -1.0)]);
        let g = project_to_dag(&names(3), &weights);
        // (0,1) then (0,2) as x2 -> x0; (1,2) would close the cycle
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (2, 0)]);
    }
}
