//! Latent-score model for ordering-wise answers.
//!
//! Each answer `y` on `(u, v)` is modeled as
//! `y ~ Normal(10 * tanh(phi[u] - phi[v]), sigma^2)` with an independent
//! zero-mean Gaussian prior of scale `prior_scale` on every score. Higher
//! scores mean more upstream.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::{KnowledgeSet, Protocol};

pub const SCORE_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreModelConfig {
    pub prior_scale: f64,
    pub sigma_floor: f64,
    pub initial_sigma: f64,
    pub sigma_update_every: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ScoreModelConfig {
    fn default() -> Self {
        ScoreModelConfig {
            prior_scale: 2.0,
            sigma_floor: 0.5,
            initial_sigma: 1.0,
            sigma_update_every: 10,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// Latent scores and answer noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreField {
    pub nodes: Vec<String>,
    pub phi: Vec<f64>,
    pub sigma: f64,
}

impl ScoreField {
    pub fn zeros(nodes: Vec<String>, sigma: f64) -> Self {
        let n = nodes.len();
        ScoreField {
            nodes,
            phi: vec![0.0; n],
            sigma,
        }
    }

    /// Shifts scores to sum to zero.
    pub fn gauge_fixed(mut self) -> Self {
        let mean = self.phi.iter().sum::<f64>() / self.phi.len().max(1) as f64;
        for p in &mut self.phi {
            *p -= mean;
        }
        self
    }

    /// Node indices from most to least upstream; ties by name.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.phi.len()).collect();
        idx.sort_by(|&a, &b| self.phi[b].total_cmp(&self.phi[a]).then(a.cmp(&b)));
        idx
    }
}

/// Indexed ordering-wise observations `(u, v, y)`.
pub type Observations = [(usize, usize, i32)];

pub fn data_loglik(phi: &[f64], sigma: f64, obs: &Observations) -> f64 {
    let s2 = sigma * sigma;
    let norm = -0.5 * (2.0 * PI * s2).ln();
    obs.iter()
        .map(|&(u, v, y)| {
            let r = y as f64 - SCORE_SCALE * (phi[u] - phi[v]).tanh();
            norm - r * r / (2.0 * s2)
        })
        .sum()
}

pub fn prior_loglik(phi: &[f64], prior_scale: f64) -> f64 {
    let s2 = prior_scale * prior_scale;
    let norm = -0.5 * (2.0 * PI * s2).ln();
    phi.iter().map(|p| norm - p * p / (2.0 * s2)).sum()
}

pub fn loglik_indexed(phi: &[f64], sigma: f64, prior_scale: f64, obs: &Observations) -> f64 {
    data_loglik(phi, sigma, obs) + prior_loglik(phi, prior_scale)
}

pub fn grad_indexed(phi: &[f64], sigma: f64, prior_scale: f64, obs: &Observations) -> Vec<f64> {
    let s2 = sigma * sigma;
    let mut g: Vec<f64> = phi
        .iter()
        .map(|p| -p / (prior_scale * prior_scale))
        .collect();
    for &(u, v, y) in obs {
        let t = (phi[u] - phi[v]).tanh();
        let r = y as f64 - SCORE_SCALE * t;
        let d = r / s2 * SCORE_SCALE * (1.0 - t * t);
        g[u] += d;
        g[v] -= d;
    }
    g
}

pub(crate) fn ordering_observations(
    d: &KnowledgeSet,
    nodes: &[String],
) -> Result<Vec<(usize, usize, i32)>> {
    d.require_protocol(Protocol::OrderingWise)?;
    d.indexed_in(nodes)
}

/// Log posterior density (data term plus score prior) of `field` under `d`.
pub fn score_loglik(field: &ScoreField, d: &KnowledgeSet, prior_scale: f64) -> Result<f64> {
    let obs = ordering_observations(d, &field.nodes)?;
    Ok(loglik_indexed(&field.phi, field.sigma, prior_scale, &obs))
}

/// Gradient of [`score_loglik`] with respect to the scores.
pub fn score_grad(field: &ScoreField, d: &KnowledgeSet, prior_scale: f64) -> Result<Vec<f64>> {
    let obs = ordering_observations(d, &field.nodes)?;
    Ok(grad_indexed(&field.phi, field.sigma, prior_scale, &obs))
}

fn sigma_update(phi: &[f64], obs: &Observations, floor: f64) -> f64 {
    let ss: f64 = obs
        .iter()
        .map(|&(u, v, y)| (y as f64 - SCORE_SCALE * (phi[u] - phi[v]).tanh()).powi(2))
        .sum();
    (ss / obs.len() as f64).sqrt().max(floor)
}

/// Expected information of the scores under the current linearization.
fn fisher(phi: &[f64], sigma: f64, prior_scale: f64, obs: &Observations) -> DMatrix<f64> {
    let n = phi.len();
    let mut f = DMatrix::<f64>::identity(n, n) / (prior_scale * prior_scale);
    let s2 = sigma * sigma;
    for &(u, v, _) in obs {
        let t = (phi[u] - phi[v]).tanh();
        let j = SCORE_SCALE * (1.0 - t * t);
        let w = j * j / s2;
        f[(u, u)] += w;
        f[(v, v)] += w;
        f[(u, v)] -= w;
        f[(v, u)] -= w;
    }
    f
}

/// Trace of one score fit, kept for monotonicity checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AscentTrace {
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub final_grad_norm: f64,
}

/// MAP scores by ascent along Fisher-preconditioned gradients with a halving
/// line search, re-estimating the noise scale periodically.
pub fn infer_scores_indexed(
    nodes: &[String],
    obs: &Observations,
    config: &ScoreModelConfig,
) -> Result<(ScoreField, AscentTrace)> {
    if obs.is_empty() {
        return Err(Error::EmptyResponses);
    }
    let mut phi = vec![0.0; nodes.len()];
    let mut sigma = config.initial_sigma.max(config.sigma_floor);
    let objective = |phi: &[f64], sigma: f64| loglik_indexed(phi, sigma, config.prior_scale, obs);
    let mut trace = AscentTrace::default();
    let mut current = objective(&phi, sigma);
    trace.objective.push(current);

    for iter in 0..config.max_iterations {
        if iter > 0 && iter % config.sigma_update_every == 0 {
            sigma = sigma_update(&phi, obs, config.sigma_floor);
            current = objective(&phi, sigma);
            trace.objective.push(current);
        }
        let g = grad_indexed(&phi, sigma, config.prior_scale, obs);
        let gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        trace.iterations = iter;
        trace.final_grad_norm = gnorm;
        if gnorm < config.tolerance {
            let next_sigma = sigma_update(&phi, obs, config.sigma_floor);
            if (next_sigma - sigma).abs() <= 1e-10 * sigma {
                let field = ScoreField {
                    nodes: nodes.to_vec(),
                    phi,
                    sigma,
                }
                .gauge_fixed();
                return Ok((field, trace));
            }
            sigma = next_sigma;
            current = objective(&phi, sigma);
            trace.objective.push(current);
            continue;
        }

        let f = fisher(&phi, sigma, config.prior_scale, obs);
        let direction = match f.cholesky() {
            Some(ch) => ch.solve(&DVector::from_vec(g.clone())),
            None => DVector::from_vec(g.clone()),
        };
        let slack = 1e-13 * current.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = phi
                .iter()
                .zip(direction.iter())
                .map(|(p, d)| p + step * d)
                .collect();
            let value = objective(&cand, sigma);
            if value >= current - slack {
                phi = cand;
                current = value.max(current);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(gnorm));
        }
        trace.objective.push(current);
    }
    Err(Error::NonConvergence(trace.final_grad_norm))
}

pub fn infer_scores(d: &KnowledgeSet, nodes: &[String]) -> Result<ScoreField> {
    infer_scores_with(d, nodes, &ScoreModelConfig::default())
}

pub fn infer_scores_with(
    d: &KnowledgeSet,
    nodes: &[String],
    config: &ScoreModelConfig,
) -> Result<ScoreField> {
    let obs = ordering_observations(d, nodes)?;
    infer_scores_indexed(nodes, &obs, config).map(|(f, _)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{all_queries, make_profile, Archetype, Query, Response, SimulatedExpert};
    use crate::graph::{asia_fixture, Dag};
    use crate::metrics::order_metrics_indexed;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn omniscient(truth: &Dag) -> KnowledgeSet {
        let mut e = SimulatedExpert::new("o", make_profile(Archetype::Omniscient), truth, 0);
        e.answer_all(&all_queries(truth), Protocol::OrderingWise)
            .unwrap()
    }

    #[test]
    fn zero_field_single_zero_answer() {
        let field = ScoreField::zeros(names(3), 1.0);
        let d: KnowledgeSet = vec![Response::new(
            "e",
            Query::new("x0", "x1").unwrap(),
            Protocol::OrderingWise,
            0,
        )
        .unwrap()]
        .into_iter()
        .collect();
        let expected = -0.5 * (2.0 * PI).ln() + 3.0 * (-0.5 * (2.0 * PI * 4.0).ln());
        assert!((score_loglik(&field, &d, 2.0).unwrap() - expected).abs() < 1e-12);

        let fit = infer_scores(&d, &names(3)).unwrap();
        assert!(fit.phi.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn chain_scores_descend() {
        let truth = Dag::from_indices(names(3), [(0, 1), (1, 2)]).unwrap();
        let fit = infer_scores(&omniscient(&truth), truth.nodes()).unwrap();
        assert!(fit.phi[0] > fit.phi[1] && fit.phi[1] > fit.phi[2]);
        assert!(fit.phi.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn asia_order_recovered() {
        let truth = asia_fixture();
        let fit = infer_scores(&omniscient(&truth), truth.nodes()).unwrap();
        assert_eq!(
            order_metrics_indexed(&fit.phi, &truth).pairwise_order_accuracy,
            1.0
        );
    }

    #[test]
    fn translation_leaves_data_term_unchanged() {
        let obs = [(0, 1, 7), (1, 2, -3), (0, 2, 10)];
        let phi = [0.3, -0.2, 0.9];
        let shifted: Vec<f64> = phi.iter().map(|p| p + 4.2).collect();
        assert!((data_loglik(&phi, 1.3, &obs) - data_loglik(&shifted, 1.3, &obs)).abs() < 1e-12);
    }

    #[test]
    fn empty_and_wrong_protocol() {
        assert_eq!(
            infer_scores(&KnowledgeSet::default(), &names(2)).unwrap_err(),
            Error::EmptyResponses
        );
        let d: KnowledgeSet =
            vec![
                Response::new("e", Query::new("x0", "x1").unwrap(), Protocol::EdgeWise, 1).unwrap(),
            ]
            .into_iter()
            .collect();
        assert!(matches!(
            infer_scores(&d, &names(2)),
            Err(Error::ProtocolMismatch { .. })
        ));
    }

    #[test]
    fn objective_never_decreases() {
        let truth = asia_fixture();
        let mut e = SimulatedExpert::new("i", make_profile(Archetype::Imperfect), &truth, 9);
        let d = e
            .answer_all(&all_queries(&truth), Protocol::OrderingWise)
            .unwrap();
        let obs = d.indexed(&truth).unwrap();
        let (_, trace) =
            infer_scores_indexed(truth.nodes(), &obs, &ScoreModelConfig::default()).unwrap();
        for w in trace.objective.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }
}
