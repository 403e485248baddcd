//! Single-expert inference from one knowledge set.

pub mod edgewise;
pub mod ordering;

pub use edgewise::{infer_edgewise, EdgePosterior, PairProbabilities, DEFAULT_PSEUDOCOUNTS};
pub use ordering::{infer_scores, score_grad, score_loglik, ScoreField, ScoreModelConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// JSON dump of a single-expert fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDump {
    pub pairs: Vec<PairProbabilities>,
    pub phi: BTreeMap<String, f64>,
    pub sigma: Option<f64>,
}

impl PosteriorDump {
    pub fn new(edges: Option<&EdgePosterior>, scores: Option<&ScoreField>) -> Self {
        PosteriorDump {
            pairs: edges.map(|e| e.dump()).unwrap_or_default(),
            phi: scores
                .map(|s| s.nodes.iter().cloned().zip(s.phi.iter().copied()).collect())
                .unwrap_or_default(),
            sigma: scores.map(|s| s.sigma),
        }
    }
}
