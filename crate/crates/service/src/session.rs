//! One respondent's elicitation session, driven one answer at a time.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use crowdcause::aggregate::ordering_graph;
use crowdcause::design::{
    select_stage, Criterion, GaussianBelief, Pair, StageBelief, StageContext,
};
use crowdcause::expert::{KnowledgeSet, Protocol, Query, Response};
use crowdcause::graph::{canonical_pairs, NetworkFile};
use crowdcause::inference::ordering::SCORE_SCALE;
use crowdcause::inference::{EdgePosterior, ScoreModelConfig, DEFAULT_PSEUDOCOUNTS};
use crowdcause::Dag;
use serde::{Deserialize, Serialize};

const RESPONDENT: &str = "respondent";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session budget is used up")]
    SessionExhausted,
    #[error("no query is waiting for an answer")]
    NoPendingQuery,
    #[error("value {value} is outside {lo}..={hi}")]
    OutOfRange { value: i64, lo: i32, hi: i32 },
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "UnknownSession",
            SessionError::SessionExhausted => "SessionExhausted",
            SessionError::NoPendingQuery => "NoPendingQuery",
            SessionError::OutOfRange { .. } => "OutOfRange",
            SessionError::InvalidBudget(_) => "InvalidBudget",
            SessionError::InvalidNetwork(_) => "InvalidNetwork",
            SessionError::InvalidRequest(_) => "InvalidRequest",
            SessionError::Storage(_) => "Storage",
        }
    }
}

pub type SessionResult<T> = std::result::Result<T, SessionError>;

/// Everything needed to recreate a session from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub network: NetworkFile,
    pub protocol: Protocol,
    pub criterion: Criterion,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Persisted session history, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        spec: SessionSpec,
        at_ms: u64,
    },
    Answered {
        pair: [String; 2],
        value: i32,
        at_ms: u64,
    },
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
enum Belief {
    Edge(EdgePosterior),
    /// Linearized score belief; answers enter as `y / 10`.
    Ordering(GaussianBelief),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextQuery {
    pub pair: [String; 2],
    pub question_text: String,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfidence {
    pub u: String,
    pub v: String,
    pub forward: f64,
    pub none: f64,
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot {
    /// `[u, v, confidence]` for every edge of the current estimate.
    pub edges: Vec<(String, String, f64)>,
    pub entropy: f64,
    pub entropy_trace: Vec<f64>,
    pub answered: usize,
    pub remaining: usize,
    pub pairs: Vec<PairConfidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub nodes: Vec<String>,
    pub descriptions: BTreeMap<String, String>,
    pub protocol: Protocol,
    pub criterion: Criterion,
    pub budget: usize,
    pub remaining: usize,
    pub answered: usize,
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    spec: SessionSpec,
    nodes: Vec<String>,
    answered: Vec<(Pair, i32)>,
    pending: Option<Pair>,
    belief: Belief,
    responses: KnowledgeSet,
    estimate: Dag,
    entropy_trace: Vec<f64>,
    created_ms: u64,
    updated_ms: u64,
}

impl Session {
    pub fn new(id: String, spec: SessionSpec, at_ms: u64) -> SessionResult<Self> {
        let dag = spec
            .network
            .to_dag()
            .map_err(|e| SessionError::InvalidNetwork(e.to_string()))?;
        if dag.n() < 2 {
            return Err(SessionError::InvalidNetwork(
                "need at least two variables".into(),
            ));
        }
        let pairs = dag.n() * (dag.n() - 1) / 2;
        if spec.budget == 0 || spec.budget > pairs {
            return Err(SessionError::InvalidBudget(format!(
                "budget must be between 1 and {pairs}, got {}",
                spec.budget
            )));
        }
        let nodes = dag.nodes().to_vec();
        let belief = match spec.protocol {
            Protocol::EdgeWise => {
                Belief::Edge(EdgePosterior::new(nodes.clone(), DEFAULT_PSEUDOCOUNTS))
            }
            Protocol::OrderingWise => {
                let prior_var = ScoreModelConfig::default().prior_scale.powi(2);
                let noise_var = (ScoreModelConfig::default().initial_sigma / SCORE_SCALE).powi(2);
                Belief::Ordering(GaussianBelief::isotropic(nodes.len(), prior_var, noise_var))
            }
        };
        let mut s = Session {
            id,
            estimate: Dag::empty(&nodes).expect("names come from a valid network"),
            nodes,
            spec,
            answered: Vec::new(),
            pending: None,
            belief,
            responses: KnowledgeSet::default(),
            entropy_trace: Vec::new(),
            created_ms: at_ms,
            updated_ms: at_ms,
        };
        s.entropy_trace.push(s.entropy());
        Ok(s)
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[Event]) -> SessionResult<Self> {
        let Some(Event::Created {
            session_id,
            spec,
            at_ms,
        }) = events.first()
        else {
            return Err(SessionError::Storage(
                "log does not start with a creation event".into(),
            ));
        };
        let mut s = Session::new(session_id.clone(), spec.clone(), *at_ms)?;
        for e in &events[1..] {
            match e {
                Event::Answered { pair, value, at_ms } => {
                    let p = s.pair_index(pair)?;
                    s.pending = Some(p);
                    s.validate(*value as i64)?;
                    s.apply(*value, *at_ms);
                }
                Event::Created { .. } => {
                    return Err(SessionError::Storage("second creation event in log".into()))
                }
            }
        }
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spec(&self) -> &SessionSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn remaining(&self) -> usize {
        self.spec.budget - self.answered.len()
    }

    pub fn estimate(&self) -> &Dag {
        &self.estimate
    }

    pub fn pending(&self) -> Option<[String; 2]> {
        self.pending.map(|p| self.names(p))
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id.clone(),
            nodes: self.nodes.clone(),
            descriptions: self.spec.network.descriptions.clone(),
            protocol: self.spec.protocol,
            criterion: self.spec.criterion,
            budget: self.spec.budget,
            remaining: self.remaining(),
            answered: self.answered.len(),
            created_ms: self.created_ms,
            updated_ms: self.updated_ms,
        }
    }

    fn names(&self, (u, v): Pair) -> [String; 2] {
        [self.nodes[u].clone(), self.nodes[v].clone()]
    }

    fn pair_index(&self, pair: &[String; 2]) -> SessionResult<Pair> {
        let idx = |name: &str| {
            self.nodes
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| SessionError::InvalidRequest(format!("unknown variable `{name}`")))
        };
        let (u, v) = (idx(&pair[0])?, idx(&pair[1])?);
        if u >= v {
            return Err(SessionError::InvalidRequest(
                "pairs are logged in canonical order".into(),
            ));
        }
        Ok((u, v))
    }

    fn describe(&self, name: &str) -> String {
        self.spec
            .network
            .descriptions
            .get(name)
            .cloned()
            .unwrap_or_else(|| name.to_string())
    }

    pub fn question_text(&self, (u, v): Pair) -> String {
        let (a, b) = (self.describe(&self.nodes[u]), self.describe(&self.nodes[v]));
        match self.spec.protocol {
            Protocol::OrderingWise => {
                format!("How strongly do you believe that {a} is an upstream causal variable of {b}?")
            }
            Protocol::EdgeWise => format!(
                "Does {a} directly influence {b}? Answer 1 for {a} -> {b}, -1 for {b} -> {a}, 0 for no direct influence."
            ),
        }
    }

    /// The query awaiting an answer; chosen on first call and repeated until
    /// it is answered.
    pub fn next_query(&mut self) -> SessionResult<NextQuery> {
        if self.remaining() == 0 {
            return Err(SessionError::SessionExhausted);
        }
        let pair = match self.pending {
            Some(p) => p,
            None => {
                let p = self.choose()?;
                self.pending = Some(p);
                p
            }
        };
        Ok(NextQuery {
            pair: self.names(pair),
            question_text: self.question_text(pair),
            remaining: self.remaining(),
        })
    }

    fn choose(&self) -> SessionResult<Pair> {
        let asked: Vec<Pair> = self.answered.iter().map(|&(p, _)| p).collect();
        let pool: Vec<Pair> = canonical_pairs(self.nodes.len())
            .into_iter()
            .filter(|p| !asked.contains(p))
            .collect();
        let history: Vec<(Pair, f64)> = asked.iter().map(|&p| (p, 1.0)).collect();
        let belief = match &self.belief {
            Belief::Edge(p) => StageBelief::Dirichlet(p.clone()),
            Belief::Ordering(g) => StageBelief::Gaussian(g.clone()),
        };
        let ctx = StageContext {
            stage: self.answered.len(),
            n: self.nodes.len(),
            history: &history,
            weight: 1.0,
            belief: Some(&belief),
            seed: self.spec.seed.wrapping_add(self.answered.len() as u64),
        };
        let stage = select_stage(&pool, 1, self.spec.criterion, &ctx)
            .map_err(|e| SessionError::InvalidRequest(e.to_string()))?;
        Ok(stage.queries[0])
    }

    /// Checks an answer against the pending query without changing state.
    pub fn validate(&self, value: i64) -> SessionResult<(Pair, i32)> {
        let pair = self.pending.ok_or(SessionError::NoPendingQuery)?;
        let (lo, hi) = self.spec.protocol.range();
        if value < lo as i64 || value > hi as i64 {
            return Err(SessionError::OutOfRange { value, lo, hi });
        }
        Ok((pair, value as i32))
    }

    /// Event that `submit` would log for `value`.
    pub fn answer_event(&self, value: i64, at_ms: u64) -> SessionResult<Event> {
        let (pair, value) = self.validate(value)?;
        Ok(Event::Answered {
            pair: self.names(pair),
            value,
            at_ms,
        })
    }

    pub fn submit(&mut self, value: i64, at_ms: u64) -> SessionResult<EstimateSnapshot> {
        let (_, value) = self.validate(value)?;
        self.apply(value, at_ms);
        Ok(self.snapshot())
    }

    fn apply(&mut self, value: i32, at_ms: u64) {
        let (u, v) = self.pending.take().expect("validated");
        match &mut self.belief {
            Belief::Edge(post) => post.observe(u, v, value, 1.0),
            Belief::Ordering(g) => g.observe(u, v, value as f64 / SCORE_SCALE),
        }
        let query =
            Query::new(self.nodes[u].clone(), self.nodes[v].clone()).expect("distinct names");
        self.responses.push(
            Response::new(RESPONDENT, query, self.spec.protocol, value)
                .expect("value checked against range"),
        );
        self.answered.push(((u, v), value));
        self.estimate = match &self.belief {
            Belief::Edge(post) => post.map_dag(),
            Belief::Ordering(_) => {
                ordering_graph(&self.responses, &self.nodes).expect("own responses are consistent")
            }
        };
        self.entropy_trace.push(self.entropy());
        self.updated_ms = at_ms;
    }

    fn entropy(&self) -> f64 {
        match &self.belief {
            Belief::Edge(post) => post.predictive_entropy(),
            Belief::Ordering(g) => g.entropy(),
        }
    }

    /// `(forward, none, backward)` support for the canonical pair `(u, v)`.
    fn triple(&self, u: usize, v: usize) -> [f64; 3] {
        match &self.belief {
            Belief::Edge(post) => post.triple(u, v),
            Belief::Ordering(_) => {
                let values: Vec<f64> = self
                    .answered
                    .iter()
                    .filter(|(p, _)| *p == (u, v))
                    .map(|&(_, y)| y as f64 / SCORE_SCALE)
                    .collect();
                if values.is_empty() {
                    return [1.0 / 3.0; 3];
                }
                let m = values.iter().sum::<f64>() / values.len() as f64;
                [m.max(0.0), 1.0 - m.abs(), (-m).max(0.0)]
            }
        }
    }

    pub fn snapshot(&self) -> EstimateSnapshot {
        let edges = self
            .estimate
            .edges()
            .map(|(a, b)| {
                let t = self.triple(a.min(b), a.max(b));
                let conf = if a < b { t[0] } else { t[2] };
                (self.nodes[a].clone(), self.nodes[b].clone(), conf)
            })
            .collect();
        let pairs = canonical_pairs(self.nodes.len())
            .into_iter()
            .map(|(u, v)| {
                let [forward, none, backward] = self.triple(u, v);
                PairConfidence {
                    u: self.nodes[u].clone(),
                    v: self.nodes[v].clone(),
                    forward,
                    none,
                    backward,
                }
            })
            .collect();
        EstimateSnapshot {
            edges,
            entropy: *self.entropy_trace.last().expect("trace starts at creation"),
            entropy_trace: self.entropy_trace.clone(),
            answered: self.answered.len(),
            remaining: self.remaining(),
            pairs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crowdcause::graph::asia_network_file;
    use crowdcause::{asia_fixture, shd};

    fn spec(protocol: Protocol, criterion: Criterion, budget: usize) -> SessionSpec {
        SessionSpec {
            network: asia_network_file(),
            protocol,
            criterion,
            budget,
            seed: 0,
        }
    }

    #[test]
    fn rejects_bad_budgets() {
        for b in [0, 29] {
            assert!(matches!(
                Session::new("s".into(), spec(Protocol::EdgeWise, Criterion::Eig, b), 0),
                Err(SessionError::InvalidBudget(_))
            ));
        }
    }

    #[test]
    fn fresh_eig_session_asks_smallest_pair_twice() {
        for protocol in [Protocol::EdgeWise, Protocol::OrderingWise] {
            let mut s = Session::new("s".into(), spec(protocol, Criterion::Eig, 10), 0).unwrap();
            let q = s.next_query().unwrap();
            assert_eq!(q.pair, [s.nodes()[0].clone(), s.nodes()[1].clone()]);
            assert_eq!(s.next_query().unwrap(), q);
            assert_eq!(q.remaining, 10);
        }
    }

    #[test]
    fn answer_needs_pending_query_and_range() {
        let mut s = Session::new(
            "s".into(),
            spec(Protocol::OrderingWise, Criterion::Eig, 3),
            0,
        )
        .unwrap();
        assert_eq!(s.submit(1, 0).unwrap_err(), SessionError::NoPendingQuery);
        s.next_query().unwrap();
        assert!(matches!(
            s.submit(11, 0),
            Err(SessionError::OutOfRange { .. })
        ));
        assert_eq!(s.submit(-10, 0).unwrap().answered, 1);
        assert_eq!(s.submit(3, 0).unwrap_err(), SessionError::NoPendingQuery);
    }

    #[test]
    fn fresh_snapshot_is_uniform() {
        for protocol in [Protocol::EdgeWise, Protocol::OrderingWise] {
            let s = Session::new("s".into(), spec(protocol, Criterion::Eig, 5), 0).unwrap();
            let snap = s.snapshot();
            assert!(snap.edges.is_empty());
            assert!(snap
                .pairs
                .iter()
                .all(|p| (p.forward - 1.0 / 3.0).abs() < 1e-12
                    && (p.none - p.backward).abs() < 1e-12));
        }
    }

    #[test]
    fn strongest_answer_dominates() {
        let mut s = Session::new(
            "s".into(),
            spec(Protocol::OrderingWise, Criterion::Eig, 5),
            0,
        )
        .unwrap();
        let q = s.next_query().unwrap();
        let snap = s.submit(10, 0).unwrap();
        let best = snap
            .pairs
            .iter()
            .max_by(|a, b| a.forward.total_cmp(&b.forward))
            .unwrap();
        assert_eq!([best.u.clone(), best.v.clone()], q.pair);
    }

    #[test]
    fn zero_moves_toward_no_relation() {
        let mut s =
            Session::new("s".into(), spec(Protocol::EdgeWise, Criterion::Eig, 5), 0).unwrap();
        s.next_query().unwrap();
        let snap = s.submit(0, 0).unwrap();
        assert!(snap.pairs[0].none > snap.pairs[1].none);
    }

    #[test]
    fn truthful_edge_transcript_recovers_asia() {
        let truth = asia_fixture();
        let mut s =
            Session::new("s".into(), spec(Protocol::EdgeWise, Criterion::Eig, 28), 0).unwrap();
        let mut events = vec![Event::Created {
            session_id: "s".into(),
            spec: s.spec().clone(),
            at_ms: 0,
        }];
        for t in 0..28 {
            let q = s.next_query().unwrap();
            let (u, v) = (
                truth.index_of(&q.pair[0]).unwrap(),
                truth.index_of(&q.pair[1]).unwrap(),
            );
            let value = truth.relation(u, v).value() as i64;
            events.push(s.answer_event(value, t).unwrap());
            s.submit(value, t).unwrap();
        }
        assert_eq!(shd(s.estimate(), &truth).unwrap(), 0);
        assert_eq!(s.remaining(), 0);
        assert_eq!(s.next_query().unwrap_err(), SessionError::SessionExhausted);
        let again = Session::replay(&events).unwrap();
        assert_eq!(again.estimate(), s.estimate());
        assert_eq!(again.snapshot(), s.snapshot());
    }
}
