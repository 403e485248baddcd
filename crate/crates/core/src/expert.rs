//! Simulated informants: knowledge-quality profiles, perturbed belief graphs
//! and stochastic answers under the two survey protocols.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical_pairs, Dag, PairRelation};

/// Expert archetypes with preset knowledge-quality profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Archetype {
    Omniscient,
    PerfectIncomplete,
    Imperfect,
    Uncertain,
    BadActor,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Omniscient,
        Archetype::PerfectIncomplete,
        Archetype::Imperfect,
        Archetype::Uncertain,
        Archetype::BadActor,
    ];
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match key.to_ascii_lowercase().as_str() {
            "omniscient" => Ok(Archetype::Omniscient),
            "perfectincomplete" => Ok(Archetype::PerfectIncomplete),
            "imperfect" => Ok(Archetype::Imperfect),
            "uncertain" => Ok(Archetype::Uncertain),
            "badactor" => Ok(Archetype::BadActor),
            _ => Err(Error::InvalidValue(format!("unknown archetype `{s}`"))),
        }
    }
}

/// Four knowledge-quality dimensions, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    #[serde(alias = "c")]
    pub completeness: f64,
    #[serde(alias = "v")]
    pub validity: f64,
    #[serde(alias = "kappa")]
    pub confidence: f64,
    #[serde(alias = "tau")]
    pub trustworthiness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<Archetype>,
}

impl ExpertProfile {
    pub fn new(
        completeness: f64,
        validity: f64,
        confidence: f64,
        trustworthiness: f64,
    ) -> Result<Self> {
        let p = ExpertProfile {
            completeness,
            validity,
            confidence,
            trustworthiness,
            archetype: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("completeness", self.completeness),
            ("validity", self.validity),
            ("confidence", self.confidence),
            ("trustworthiness", self.trustworthiness),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidValue(format!("{name} = {x} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Rate at which a known non-adjacent pair is believed to be linked.
    pub fn spurious_rate(&self) -> f64 {
        0.2 * (1.0 - self.validity)
    }

    /// Experts below 0.5 trustworthiness manipulate their beliefs.
    pub fn is_adversarial(&self) -> bool {
        self.trustworthiness < 0.5
    }
}

pub fn make_profile(archetype: Archetype) -> ExpertProfile {
    let (c, v, k, t) = match archetype {
        Archetype::Omniscient => (1.0, 1.0, 1.0, 1.0),
        Archetype::PerfectIncomplete => (0.4, 1.0, 0.9, 1.0),
        Archetype::Imperfect => (0.8, 0.7, 0.7, 0.9),
        Archetype::Uncertain => (0.7, 0.85, 0.3, 1.0),
        Archetype::BadActor => (0.9, 0.2, 0.9, 0.1),
    };
    ExpertProfile {
        completeness: c,
        validity: v,
        confidence: k,
        trustworthiness: t,
        archetype: Some(archetype),
    }
}

/// The structure an expert believes in, defined on the pairs they know.
/// Asserted edges may form cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGraph {
    nodes: Vec<String>,
    relations: BTreeMap<(usize, usize), PairRelation>,
}

impl BeliefGraph {
    pub fn new(nodes: Vec<String>, relations: BTreeMap<(usize, usize), PairRelation>) -> Self {
        debug_assert!(relations.keys().all(|&(u, v)| u < v && v < nodes.len()));
        BeliefGraph { nodes, relations }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn is_known(&self, u: usize, v: usize) -> bool {
        self.relations.contains_key(&(u.min(v), u.max(v)))
    }

    /// Believed relation of `(u, v)` in the stated orientation.
    pub fn relation(&self, u: usize, v: usize) -> Option<PairRelation> {
        if u < v {
            self.relations.get(&(u, v)).copied()
        } else {
            self.relations.get(&(v, u)).map(|r| r.reversed())
        }
    }

    pub fn known_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.relations.keys().copied()
    }

    pub fn asserted_edges(&self) -> Vec<(usize, usize)> {
        self.relations
            .iter()
            .filter_map(|(&(u, v), r)| match r {
                PairRelation::Forward => Some((u, v)),
                PairRelation::Backward => Some((v, u)),
                PairRelation::None => None,
            })
            .collect()
    }

    /// Shortest directed path over asserted edges.
    pub fn path_len(&self, src: usize, dst: usize) -> Option<usize> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for (u, v) in self.asserted_edges() {
            adj[u].push(v);
        }
        let mut dist = vec![None; n];
        dist[src] = Some(0usize);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            if u == dst {
                return Some(d);
            }
            for &c in &adj[u] {
                if dist[c].is_none() {
                    dist[c] = Some(d + 1);
                    queue.push_back(c);
                }
            }
        }
        None
    }
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> PairRelation {
    if rng.random_bool(0.5) {
        PairRelation::Forward
    } else {
        PairRelation::Backward
    }
}

/// Draws the expert's belief graph by perturbing `truth` according to the
/// profile.
pub fn sample_belief_graph<R: Rng + ?Sized>(
    profile: &ExpertProfile,
    truth: &Dag,
    rng: &mut R,
) -> BeliefGraph {
    let spurious = profile.spurious_rate();
    let mut relations = BTreeMap::new();
    for (u, v) in canonical_pairs(truth.n()) {
        if !rng.random_bool(profile.completeness) {
            continue;
        }
        let actual = truth.relation(u, v);
        let mut believed = match actual {
            PairRelation::None => {
                if rng.random_bool(spurious) {
                    random_direction(rng)
                } else {
                    PairRelation::None
                }
            }
            edge => {
                if rng.random_bool(profile.validity) {
                    edge
                } else if rng.random_bool(0.5) {
                    edge.reversed()
                } else {
                    PairRelation::None
                }
            }
        };
        if profile.is_adversarial() && rng.random_bool(1.0 - profile.trustworthiness) {
            believed = match believed {
                PairRelation::None => random_direction(rng),
                edge => edge.reversed(),
            };
        }
        relations.insert((u, v), believed);
    }
    BeliefGraph::new(truth.nodes().to_vec(), relations)
}

/// Survey protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Ternary direct-link answer in `{-1, 0, 1}`.
    #[serde(rename = "edge", alias = "edge-wise", alias = "EdgeWise")]
    EdgeWise,
    /// Signed upstream strength in `[-10, 10]`.
    #[serde(rename = "ordering", alias = "ordering-wise", alias = "OrderingWise")]
    OrderingWise,
}

impl Protocol {
    pub fn range(self) -> (i32, i32) {
        match self {
            Protocol::EdgeWise => (-1, 1),
            Protocol::OrderingWise => (-10, 10),
        }
    }

    pub fn contains(self, value: i32) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&value)
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::EdgeWise => "edge",
            Protocol::OrderingWise => "ordering",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "edge" | "edge-wise" | "edgewise" => Ok(Protocol::EdgeWise),
            "ordering" | "ordering-wise" | "orderingwise" | "order" => Ok(Protocol::OrderingWise),
            _ => Err(Error::InvalidValue(format!("unknown protocol `{s}`"))),
        }
    }
}

/// A pair query about `u` and `v`. Answers are read in the stated
/// orientation; [`Query::canonical`] puts the names in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub u: String,
    pub v: String,
}

impl Query {
    pub fn new(u: impl Into<String>, v: impl Into<String>) -> Result<Self> {
        let (u, v) = (u.into(), v.into());
        if u == v {
            return Err(Error::InvalidValue(format!(
                "query pairs `{u}` with itself"
            )));
        }
        Ok(Query { u, v })
    }

    pub fn is_canonical(&self) -> bool {
        self.u < self.v
    }

    /// Canonical form and whether the orientation was flipped.
    pub fn canonical(&self) -> (Query, bool) {
        if self.is_canonical() {
            (self.clone(), false)
        } else {
            (
                Query {
                    u: self.v.clone(),
                    v: self.u.clone(),
                },
                true,
            )
        }
    }

    pub fn indices(&self, dag: &Dag) -> Result<(usize, usize)> {
        Ok((dag.index_of(&self.u)?, dag.index_of(&self.v)?))
    }

    fn indices_in(&self, nodes: &[String]) -> Result<(usize, usize)> {
        let find = |s: &str| {
            nodes
                .binary_search_by(|n| n.as_str().cmp(s))
                .map_err(|_| Error::UnknownNode(s.to_string()))
        };
        Ok((find(&self.u)?, find(&self.v)?))
    }
}

/// Every canonical pair of a graph as a query.
pub fn all_queries(dag: &Dag) -> Vec<Query> {
    canonical_pairs(dag.n())
        .into_iter()
        .map(|(u, v)| Query {
            u: dag.nodes()[u].clone(),
            v: dag.nodes()[v].clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub expert_id: String,
    pub query: Query,
    pub protocol: Protocol,
    pub value: i32,
}

impl Response {
    pub fn new(
        expert_id: impl Into<String>,
        query: Query,
        protocol: Protocol,
        value: i32,
    ) -> Result<Self> {
        if !protocol.contains(value) {
            return Err(Error::InvalidValue(format!(
                "{value} outside the {protocol} range"
            )));
        }
        Ok(Response {
            expert_id: expert_id.into(),
            query,
            protocol,
            value,
        })
    }

    /// Same answer expressed on the canonical orientation of the pair.
    pub fn canonical(&self) -> Response {
        let (query, flipped) = self.query.canonical();
        Response {
            expert_id: self.expert_id.clone(),
            query,
            protocol: self.protocol,
            value: if flipped { -self.value } else { self.value },
        }
    }
}

/// Responses gathered from one or more experts, in elicitation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeSet {
    pub responses: Vec<Response>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    expert_id: String,
    u: String,
    v: String,
    protocol: String,
    value: i32,
}

impl KnowledgeSet {
    pub fn new(responses: Vec<Response>) -> Self {
        KnowledgeSet { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn push(&mut self, r: Response) {
        self.responses.push(r);
    }

    pub fn extend(&mut self, other: KnowledgeSet) {
        self.responses.extend(other.responses);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Response> {
        self.responses.iter()
    }

    /// Single protocol shared by all responses, if any.
    pub fn protocol(&self) -> Option<Protocol> {
        self.responses.first().map(|r| r.protocol)
    }

    /// Fails unless every response uses `protocol`.
    pub fn require_protocol(&self, protocol: Protocol) -> Result<()> {
        match self.responses.iter().find(|r| r.protocol != protocol) {
            Some(r) => Err(Error::ProtocolMismatch {
                expected: protocol.name(),
                found: r.protocol.name(),
            }),
            None => Ok(()),
        }
    }

    /// Expert ids in order of first appearance.
    pub fn expert_ids(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for r in &self.responses {
            if !seen.contains(&r.expert_id) {
                seen.push(r.expert_id.clone());
            }
        }
        seen
    }

    /// Splits by expert, sorted by expert id.
    pub fn by_expert(&self) -> BTreeMap<String, KnowledgeSet> {
        let mut out: BTreeMap<String, KnowledgeSet> = BTreeMap::new();
        for r in &self.responses {
            out.entry(r.expert_id.clone()).or_default().push(r.clone());
        }
        out
    }

    /// Canonical pair indices and canonical-orientation values.
    pub fn indexed(&self, dag: &Dag) -> Result<Vec<(usize, usize, i32)>> {
        self.indexed_in(dag.nodes())
    }

    pub fn indexed_in(&self, nodes: &[String]) -> Result<Vec<(usize, usize, i32)>> {
        self.responses
            .iter()
            .map(|r| {
                let c = r.canonical();
                let (u, v) = c.query.indices_in(nodes)?;
                Ok((u, v, c.value))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.responses {
            w.serialize(CsvRow {
                expert_id: r.expert_id.clone(),
                u: r.query.u.clone(),
                v: r.query.v.clone(),
                protocol: r.protocol.name().to_string(),
                value: r.value,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut responses = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            let protocol: Protocol = row.protocol.parse()?;
            responses.push(Response::new(
                row.expert_id,
                Query::new(row.u, row.v)?,
                protocol,
                row.value,
            )?);
        }
        Ok(KnowledgeSet { responses })
    }
}

impl FromIterator<Response> for KnowledgeSet {
    fn from_iter<T: IntoIterator<Item = Response>>(iter: T) -> Self {
        KnowledgeSet {
            responses: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a KnowledgeSet {
    type Item = &'a Response;
    type IntoIter = std::slice::Iter<'a, Response>;

    fn into_iter(self) -> Self::IntoIter {
        self.responses.iter()
    }
}

/// Edge-wise answer: the believed relation, reported with probability
/// equal to the expert's confidence, otherwise an abstention.
pub fn answer_edge<R: Rng + ?Sized>(
    profile: &ExpertProfile,
    belief: &BeliefGraph,
    q: &Query,
    rng: &mut R,
) -> Result<i32> {
    let (u, v) = q.indices_in(belief.nodes())?;
    let Some(rel) = belief.relation(u, v) else {
        return Ok(0);
    };
    if rng.random_bool(profile.confidence) {
        Ok(rel.value())
    } else {
        Ok(0)
    }
}

/// Ordering-wise answer: signed strength that decays linearly with the
/// believed path length, scaled by confidence and perturbed by
/// validity-dependent noise.
pub fn answer_order<R: Rng + ?Sized>(
    profile: &ExpertProfile,
    belief: &BeliefGraph,
    q: &Query,
    rng: &mut R,
) -> Result<i32> {
    let (u, v) = q.indices_in(belief.nodes())?;
    let n = belief.nodes().len() as f64;
    let strength = |len: usize| 10.0 * (1.0 - (len as f64 - 1.0) / n);
    let base = match (belief.path_len(u, v), belief.path_len(v, u)) {
        (Some(a), Some(b)) if a < b => strength(a),
        (Some(a), Some(b)) if b < a => -strength(b),
        (Some(_), Some(_)) => 0.0,
        (Some(a), None) => strength(a),
        (None, Some(b)) => -strength(b),
        (None, None) => 0.0,
    };
    let z: f64 = rng.sample(StandardNormal);
    let noise = 2.0 * (1.0 - profile.validity) * z;
    let value = (profile.confidence * base + noise)
        .round()
        .clamp(-10.0, 10.0);
    Ok(value as i32)
}

/// A simulated informant with its own seeded random source.
#[derive(Debug, Clone)]
pub struct SimulatedExpert {
    pub id: String,
    pub profile: ExpertProfile,
    pub belief: BeliefGraph,
    rng: ChaCha8Rng,
}

impl SimulatedExpert {
    pub fn new(id: impl Into<String>, profile: ExpertProfile, truth: &Dag, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let belief = sample_belief_graph(&profile, truth, &mut rng);
        SimulatedExpert {
            id: id.into(),
            profile,
            belief,
            rng,
        }
    }

    pub fn answer(&mut self, q: &Query, protocol: Protocol) -> Result<Response> {
        let value = match protocol {
            Protocol::EdgeWise => answer_edge(&self.profile, &self.belief, q, &mut self.rng)?,
            Protocol::OrderingWise => answer_order(&self.profile, &self.belief, q, &mut self.rng)?,
        };
        Response::new(self.id.clone(), q.clone(), protocol, value)
    }

    pub fn answer_all(&mut self, queries: &[Query], protocol: Protocol) -> Result<KnowledgeSet> {
        queries.iter().map(|q| self.answer(q, protocol)).collect()
    }
}

/// One entry of a crowd specification file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdMember {
    pub expert_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<Archetype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ExpertProfile>,
    #[serde(default)]
    pub seed: u64,
}

impl CrowdMember {
    pub fn resolve_profile(&self) -> Result<ExpertProfile> {
        match (&self.profile, self.archetype) {
            (Some(p), _) => {
                p.validate()?;
                Ok(*p)
            }
            (None, Some(a)) => Ok(make_profile(a)),
            (None, None) => Err(Error::InvalidValue(format!(
                "expert `{}` needs an archetype or a profile",
                self.expert_id
            ))),
        }
    }
}

/// `count` members of one archetype, ids `{prefix}{i}`, seeds `0..count`.
pub fn homogeneous_crowd(archetype: Archetype, count: usize, prefix: &str) -> Vec<CrowdMember> {
    (0..count)
        .map(|i| CrowdMember {
            expert_id: format!("{prefix}{i:02}"),
            archetype: Some(archetype),
            profile: None,
            seed: i as u64,
        })
        .collect()
}

/// Mixes a replicate seed with a member's own seed and position.
pub fn member_seed(replicate_seed: u64, member: &CrowdMember, position: usize) -> u64 {
    let mut x = replicate_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(member.seed.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(position as u64);
    // splitmix64 finalizer
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Instantiates a crowd for one replicate.
pub fn build_crowd(
    members: &[CrowdMember],
    truth: &Dag,
    replicate_seed: u64,
) -> Result<Vec<SimulatedExpert>> {
    members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(SimulatedExpert::new(
                m.expert_id.clone(),
                m.resolve_profile()?,
                truth,
                member_seed(replicate_seed, m, i),
            ))
        })
        .collect()
}

/// Every expert answers every query.
pub fn elicit(
    experts: &mut [SimulatedExpert],
    queries: &[Query],
    protocol: Protocol,
) -> Result<KnowledgeSet> {
    let mut out = KnowledgeSet::default();
    for e in experts.iter_mut() {
        out.extend(e.answer_all(queries, protocol)?);
    }
    Ok(out)
}
