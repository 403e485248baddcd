//! Query-level mixture model over all raw responses of a crowd.
//!
//! Every response on a pair is generated by one of three mechanisms:
//! upstream evidence (`+`), downstream evidence (`-`) or no evidence (`0`).
//! The candidate graph fixes, for each pair, its relation class (adjacent,
//! ancestral through a longer path, or unconnected), the orientation in
//! which `+` agrees with the graph, and the difficulty
//! `g = 1 / (1 + path length)` (1 for unconnected pairs). Mixing weights
//! belong to one expert and one relation class, and carry a Dirichlet prior
//! that leans towards `+` where the graph implies a relation and towards `0`
//! elsewhere. Each expert also has one reliability scale `f`; the product
//! `f * g` scales component precision (ordering answers) or answer
//! propensity (edge-wise answers).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::{KnowledgeSet, Protocol};
use crate::graph::{canonical_pairs, Dag};

pub const MAX_EM_ITERATIONS: usize = 500;
pub const EM_TOLERANCE: f64 = 1e-7;

const SIGMA_FLOOR: f64 = 0.5;
const MIN_COMPONENT_SD: f64 = 0.5;
const F_BOUNDS: (f64, f64) = (1e-3, 1e3);
const EDGE_F_BOUNDS: (f64, f64) = (1e-3, 1e2);
const MU_BOUNDS: (f64, f64) = (0.5, 10.0);

/// Extra Dirichlet pseudo-counts on `(+, -, 0)` per relation class. Edge-wise
/// questions ask about direct links only, so indirect relations lean to `0`.
fn prior_extra(protocol: Protocol) -> Table {
    match protocol {
        Protocol::OrderingWise => [[1.0, 0.1, 0.1], [1.0, 0.1, 0.1], [0.1, 0.1, 1.0]],
        Protocol::EdgeWise => [[1.0, 0.1, 0.1], [0.1, 0.1, 1.0], [0.1, 0.1, 1.0]],
    }
}

const CLASSES: usize = 3;
type Table = [[f64; 3]; CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationClass {
    Adjacent,
    /// Connected through a longer directed path.
    Ancestral,
    Unconnected,
}

impl RelationClass {
    pub const ALL: [RelationClass; CLASSES] = [
        RelationClass::Adjacent,
        RelationClass::Ancestral,
        RelationClass::Unconnected,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Relation of one canonical pair `(u, v)` under a candidate graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub class: RelationClass,
    /// `+1` when the graph has a path `u -> v` (or none), `-1` for `v -> u`.
    pub orientation: i32,
    pub path_len: Option<usize>,
    pub difficulty: f64,
}

pub fn pair_geometry(candidate: &Dag) -> BTreeMap<(usize, usize), PairGeometry> {
    let reach = candidate.path_lengths();
    canonical_pairs(candidate.n())
        .into_iter()
        .map(|(u, v)| {
            let (len, orientation) = match (reach[u][v], reach[v][u]) {
                (Some(l), _) => (Some(l), 1),
                (None, Some(l)) => (Some(l), -1),
                (None, None) => (None, 1),
            };
            let class = match len {
                Some(1) => RelationClass::Adjacent,
                Some(_) => RelationClass::Ancestral,
                None => RelationClass::Unconnected,
            };
            let difficulty = len.map_or(1.0, |l| 1.0 / (1.0 + l as f64));
            (
                (u, v),
                PairGeometry {
                    class,
                    orientation,
                    path_len: len,
                    difficulty,
                },
            )
        })
        .collect()
}

/// Indexed responses of a crowd, experts sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureData {
    nodes: Vec<String>,
    protocol: Protocol,
    experts: Vec<String>,
    /// `(expert, u, v, y)` on canonical pairs.
    obs: Vec<(usize, usize, usize, i32)>,
}

impl MixtureData {
    pub fn new(d: &KnowledgeSet, nodes: &[String]) -> Result<Self> {
        let protocol = d.protocol().ok_or(Error::EmptyResponses)?;
        d.require_protocol(protocol)?;
        let mut experts = d.expert_ids();
        experts.sort();
        let indexed = d.indexed_in(nodes)?;
        let obs = d
            .iter()
            .zip(indexed)
            .map(|(r, (u, v, y))| {
                let m = experts.binary_search(&r.expert_id).expect("expert listed");
                (m, u, v, y)
            })
            .collect();
        Ok(MixtureData {
            nodes: nodes.to_vec(),
            protocol,
            experts,
            obs,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn experts(&self) -> &[String] {
        &self.experts
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> &[(usize, usize, usize, i32)] {
        &self.obs
    }

    /// Response counts collapsed by `(expert, class, path length, oriented y)`.
    fn cells(&self, geometry: &BTreeMap<(usize, usize), PairGeometry>) -> Vec<Cell> {
        let mut table: BTreeMap<(usize, RelationClass, usize, i32), (f64, f64)> = BTreeMap::new();
        for &(m, u, v, y) in &self.obs {
            let geo = geometry[&(u, v)];
            let key = (m, geo.class, geo.path_len.unwrap_or(0), y * geo.orientation);
            table.entry(key).or_insert((0.0, geo.difficulty)).0 += 1.0;
        }
        table
            .into_iter()
            .map(|((m, class, _, y), (count, g))| Cell {
                expert: m,
                class: class.index(),
                difficulty: g,
                y,
                count,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    expert: usize,
    class: usize,
    difficulty: f64,
    y: i32,
    count: f64,
}

/// Fitted mixture parameters for one candidate graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub protocol: Protocol,
    /// Mixing weights `(+, -, 0)` per expert and relation class, in the
    /// graph-agreeing orientation.
    pub expert_mixing: BTreeMap<String, BTreeMap<RelationClass, [f64; 3]>>,
    /// Expert average of `expert_mixing`.
    pub class_mixing: BTreeMap<RelationClass, [f64; 3]>,
    /// Mean of the `+` component (`-` uses the negation, `0` uses zero).
    pub mu: f64,
    pub sigma_directed: f64,
    pub sigma_null: f64,
    /// Reliability scale per expert, keyed by id.
    pub reliability: BTreeMap<String, f64>,
    /// Canonical-orientation expert-average mixing weights per pair, keyed
    /// `(u, v)`.
    #[serde(skip)]
    pub pair_mixing: BTreeMap<(usize, usize), [f64; 3]>,
    #[serde(skip)]
    pub pair_difficulty: BTreeMap<(usize, usize), f64>,
}

impl MixtureParams {
    /// Standard deviation of each component for expert `m` on a pair of
    /// difficulty `g` (ordering answers only).
    pub fn component_sd(&self, f: f64, g: f64) -> [f64; 3] {
        let scale = (f * g).sqrt();
        [
            self.sigma_directed / scale,
            self.sigma_directed / scale,
            self.sigma_null / scale,
        ]
    }
}

#[derive(Debug, Clone)]
struct State {
    protocol: Protocol,
    extra: Table,
    /// Mixing weights per expert and relation class.
    pi: Vec<Table>,
    mu: f64,
    sigma_pm: f64,
    sigma_zero: f64,
    f: Vec<f64>,
}

impl State {
    fn initial(protocol: Protocol, experts: usize) -> Self {
        let extra = prior_extra(protocol);
        let mut pi = [[0.0; 3]; CLASSES];
        for (c, extra) in extra.iter().enumerate() {
            let s: f64 = extra.iter().sum();
            for k in 0..3 {
                pi[c][k] = extra[k] / s;
            }
        }
        State {
            protocol,
            extra,
            pi: vec![pi; experts],
            mu: 5.0,
            sigma_pm: 3.0,
            sigma_zero: 3.0,
            f: vec![1.0; experts],
        }
    }

    /// Unconstrained coordinates: log mixing weights, mean, log scales.
    fn pack(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pi.iter().flatten().flatten().map(|p| p.ln()).collect();
        v.push(self.mu);
        v.push(self.sigma_pm.ln());
        v.push(self.sigma_zero.ln());
        v.extend(self.f.iter().map(|f| f.ln()));
        v
    }

    fn unpack(&self, v: &[f64]) -> State {
        let mut out = self.clone();
        let mut at = 0;
        for table in out.pi.iter_mut() {
            for row in table.iter_mut() {
                let logits = &v[at..at + 3];
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                for k in 0..3 {
                    row[k] = (logits[k] - m).exp() / z;
                }
                at += 3;
            }
        }
        out.mu = v[at].clamp(MU_BOUNDS.0, MU_BOUNDS.1);
        out.sigma_pm = v[at + 1].exp().max(SIGMA_FLOOR);
        out.sigma_zero = v[at + 2].exp().max(SIGMA_FLOOR);
        let bounds = match self.protocol {
            Protocol::OrderingWise => F_BOUNDS,
            Protocol::EdgeWise => EDGE_F_BOUNDS,
        };
        for (f, x) in out.f.iter_mut().zip(&v[at + 3..]) {
            *f = x.exp().clamp(bounds.0, bounds.1);
        }
        out
    }

    fn log_prior(&self) -> f64 {
        let mut lp = 0.0;
        for table in &self.pi {
            for (row, extra) in table.iter().zip(&self.extra) {
                for (p, a) in row.iter().zip(extra) {
                    lp += a * p.ln();
                }
            }
        }
        lp
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn log_normal(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (y - mean).powi(2) / (2.0 * var)
}

fn log_sum_exp(x: &[f64; 3]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Probability that the `+`/`-` mechanism emits a non-zero answer.
fn propensity(fg: f64) -> f64 {
    -(-fg).exp_m1()
}

/// Log joint `log(pi_k p_k(y))` per mechanism, for one cell.
fn log_joint(protocol: Protocol, s: &State, ln_pi: &[Table], cell: &Cell) -> [f64; 3] {
    let pi = ln_pi[cell.expert][cell.class];
    let fg = s.f[cell.expert] * cell.difficulty;
    match protocol {
        Protocol::OrderingWise => {
            let y = cell.y as f64;
            let var_pm = s.sigma_pm.powi(2) / fg;
            let var_0 = s.sigma_zero.powi(2) / fg;
            [
                pi[0] + log_normal(y, s.mu, var_pm),
                pi[1] + log_normal(y, -s.mu, var_pm),
                pi[2] + log_normal(y, 0.0, var_0),
            ]
        }
        Protocol::EdgeWise => match cell.y {
            0 => {
                let silent = (-fg).max(f64::MIN_POSITIVE.ln());
                [pi[0] + silent, pi[1] + silent, pi[2]]
            }
            1 => [
                pi[0] + propensity(fg).ln(),
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ],
            _ => [
                f64::NEG_INFINITY,
                pi[1] + propensity(fg).ln(),
                f64::NEG_INFINITY,
            ],
        },
    }
}

/// E-step: responsibilities per cell and the observed-data log-likelihood.
fn expectation(protocol: Protocol, s: &State, cells: &[Cell]) -> (Vec<[f64; 3]>, f64) {
    let ln_pi: Vec<Table> = s.pi.iter().map(|t| t.map(|row| row.map(f64::ln))).collect();
    let mut ll = 0.0;
    let resp = cells
        .iter()
        .map(|cell| {
            let lj = log_joint(protocol, s, &ln_pi, cell);
            let norm = log_sum_exp(&lj);
            ll += cell.count * norm;
            lj.map(|x| (x - norm).exp())
        })
        .collect();
    (resp, ll)
}

fn update_mixing(s: &mut State, cells: &[Cell], resp: &[[f64; 3]]) {
    let mut acc = vec![s.extra; s.pi.len()];
    for (cell, r) in cells.iter().zip(resp) {
        for k in 0..3 {
            acc[cell.expert][cell.class][k] += cell.count * r[k];
        }
    }
    for (table, acc) in s.pi.iter_mut().zip(&acc) {
        for c in 0..CLASSES {
            let total: f64 = acc[c].iter().sum();
            for k in 0..3 {
                table[c][k] = acc[c][k] / total;
            }
        }
    }
}

fn maximize_ordering(s: &mut State, cells: &[Cell], resp: &[[f64; 3]]) {
    update_mixing(s, cells, resp);

    // mean of the directed components
    let (mut num, mut den) = (0.0, 0.0);
    for (cell, r) in cells.iter().zip(resp) {
        let w = cell.count * s.f[cell.expert] * cell.difficulty;
        num += w * (r[0] - r[1]) * cell.y as f64;
        den += w * (r[0] + r[1]);
    }
    if den > 0.0 {
        s.mu = (num / den).clamp(MU_BOUNDS.0, MU_BOUNDS.1);
    }

    // Answers are integers, so no component may get narrower than half a
    // unit for any expert on any pair; otherwise exact repeats make the
    // likelihood unbounded through `f`.
    let mut widest = vec![0.0f64; s.f.len()];
    for cell in cells {
        widest[cell.expert] = widest[cell.expert].max(cell.difficulty);
    }
    let sharpest =
        s.f.iter()
            .zip(&widest)
            .map(|(f, g)| f * g)
            .fold(0.0, f64::max);
    let min_var = MIN_COMPONENT_SD.powi(2) * sharpest;

    // component scales
    let (mut ss_pm, mut n_pm, mut ss_0, mut n_0) = (0.0, 0.0, 0.0, 0.0);
    for (cell, r) in cells.iter().zip(resp) {
        let fg = s.f[cell.expert] * cell.difficulty;
        let y = cell.y as f64;
        ss_pm += cell.count * fg * (r[0] * (y - s.mu).powi(2) + r[1] * (y + s.mu).powi(2));
        n_pm += cell.count * (r[0] + r[1]);
        ss_0 += cell.count * fg * r[2] * y * y;
        n_0 += cell.count * r[2];
    }
    if n_pm > 0.0 {
        s.sigma_pm = (ss_pm / n_pm).max(min_var).sqrt().max(SIGMA_FLOOR);
    }
    if n_0 > 0.0 {
        s.sigma_zero = (ss_0 / n_0).max(min_var).sqrt().max(SIGMA_FLOOR);
    }

    // expert reliability
    let mut n_m = vec![0.0; s.f.len()];
    let mut ss_m = vec![0.0; s.f.len()];
    let (v_pm, v_0) = (s.sigma_pm.powi(2), s.sigma_zero.powi(2));
    for (cell, r) in cells.iter().zip(resp) {
        let y = cell.y as f64;
        n_m[cell.expert] += cell.count;
        ss_m[cell.expert] += cell.count
            * cell.difficulty
            * (r[0] * (y - s.mu).powi(2) / v_pm
                + r[1] * (y + s.mu).powi(2) / v_pm
                + r[2] * y * y / v_0);
    }
    let narrowest = v_pm.min(v_0);
    for (m, f) in s.f.iter_mut().enumerate() {
        if n_m[m] == 0.0 {
            continue;
        }
        let cap = (narrowest / (MIN_COMPONENT_SD.powi(2) * widest[m])).min(F_BOUNDS.1);
        *f = if ss_m[m] > 0.0 { n_m[m] / ss_m[m] } else { cap }
            .clamp(F_BOUNDS.0, cap.max(F_BOUNDS.0));
    }
}

/// Maximizes `sum a_i log(1 - exp(-f g_i)) - f * linear` over `f`, with
/// `emitted` holding the `(a_i, g_i)`. Newton steps are kept inside a
/// shrinking bracket, starting at `start`.
fn edge_reliability(emitted: &[(f64, f64)], linear: f64, start: f64) -> f64 {
    if emitted.iter().all(|&(a, _)| a == 0.0) {
        return EDGE_F_BOUNDS.0;
    }
    if linear == 0.0 {
        return EDGE_F_BOUNDS.1;
    }
    // first and second derivative of the objective
    let derivatives = |f: f64| -> (f64, f64) {
        let (mut d1, mut d2) = (-linear, 0.0);
        for &(a, g) in emitted {
            let em1 = (f * g).exp_m1();
            d1 += a * g / em1;
            d2 -= a * g * g * (em1 + 1.0) / (em1 * em1);
        }
        (d1, d2)
    };
    let (mut lo, mut hi) = EDGE_F_BOUNDS;
    if derivatives(lo).0 <= 0.0 {
        return lo;
    }
    if derivatives(hi).0 >= 0.0 {
        return hi;
    }
    let mut f = start.clamp(lo, hi);
    for _ in 0..200 {
        let (d1, d2) = derivatives(f);
        if d1 > 0.0 {
            lo = f;
        } else {
            hi = f;
        }
        let newton = f - d1 / d2;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - f).abs() <= 1e-10 * f || hi - lo <= 1e-12 * lo {
            return next;
        }
        f = next;
    }
    f
}

fn maximize_edgewise(s: &mut State, cells: &[Cell], resp: &[[f64; 3]]) {
    update_mixing(s, cells, resp);
    let mut emitted: Vec<Vec<(f64, f64)>> = vec![Vec::new(); s.f.len()];
    let mut linear = vec![0.0; s.f.len()];
    let mut seen = vec![false; s.f.len()];
    for (cell, r) in cells.iter().zip(resp) {
        seen[cell.expert] = true;
        if cell.y != 0 {
            let terms = &mut emitted[cell.expert];
            match terms.iter_mut().find(|(_, g)| *g == cell.difficulty) {
                Some(t) => t.0 += cell.count,
                None => terms.push((cell.count, cell.difficulty)),
            }
        } else {
            linear[cell.expert] += cell.count * (r[0] + r[1]) * cell.difficulty;
        }
    }
    for m in 0..s.f.len() {
        if seen[m] {
            s.f[m] = edge_reliability(&emitted[m], linear[m], s.f[m]);
        }
    }
}

/// Result of fitting the mixture to one candidate graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: MixtureParams,
    /// Penalized observed-data log-likelihood (data plus mixing prior).
    pub log_likelihood: f64,
    /// Objective after every E-step, in order.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

pub fn em_fit(data: &MixtureData, candidate: &Dag) -> Result<EmFit> {
    if data.is_empty() {
        return Err(Error::EmptyResponses);
    }
    if candidate.nodes() != data.nodes() {
        return Err(Error::NodeSetMismatch);
    }
    let geometry = pair_geometry(candidate);
    let cells = data.cells(&geometry);
    let protocol = data.protocol;

    let step = |s: &State, resp: &[[f64; 3]]| {
        let mut next = s.clone();
        match protocol {
            Protocol::OrderingWise => maximize_ordering(&mut next, &cells, resp),
            Protocol::EdgeWise => maximize_edgewise(&mut next, &cells, resp),
        }
        next
    };
    let evaluate = |s: &State| {
        let (resp, ll) = expectation(protocol, s, &cells);
        (resp, ll + s.log_prior())
    };

    // Plain EM steps in pairs. Edge-wise fits have a slow tail, so each pair
    // is followed by a squared extrapolation kept only when it beats the
    // second step.
    let mut best = State::initial(protocol, data.experts.len());
    let (mut resp, mut objective) = evaluate(&best);
    let mut trace = vec![objective];
    let mut iterations = 0;
    while iterations < MAX_EM_ITERATIONS {
        let s1 = step(&best, &resp);
        let (r1, o1) = evaluate(&s1);
        trace.push(o1);
        let s2 = step(&s1, &r1);
        let (mut next_resp, mut next_obj) = evaluate(&s2);
        let mut next = s2;
        iterations += 2;

        let (p0, p1, p2) = (best.pack(), s1.pack(), next.pack());
        let r: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = p2
            .iter()
            .zip(&p1)
            .zip(&r)
            .map(|((a, b), c)| a - b - c)
            .collect();
        let (nr, nv) = (norm(&r), norm(&v));
        if protocol == Protocol::EdgeWise && nv > 0.0 && nr > nv {
            let alpha = -nr / nv;
            let jump: Vec<f64> = p0
                .iter()
                .zip(&r)
                .zip(&v)
                .map(|((x, r), v)| x - 2.0 * alpha * r + alpha * alpha * v)
                .collect();
            let landed = best.unpack(&jump);
            let (rj, _) = evaluate(&landed);
            let settled = step(&landed, &rj);
            let (rs, os) = evaluate(&settled);
            iterations += 1;
            if os.is_finite() && os > next_obj {
                next = settled;
                next_resp = rs;
                next_obj = os;
            }
        }
        trace.push(next_obj);
        let converged = next_obj - objective <= EM_TOLERANCE * objective.abs().max(1e-12);
        best = next;
        resp = next_resp;
        objective = next_obj;
        if converged {
            break;
        }
    }
    let final_ll = objective;

    let mut average = [[0.0; 3]; CLASSES];
    for table in &best.pi {
        for c in 0..CLASSES {
            for k in 0..3 {
                average[c][k] += table[c][k] / best.pi.len() as f64;
            }
        }
    }
    let pair_mixing = geometry
        .iter()
        .map(|(&pair, geo)| {
            let p = average[geo.class.index()];
            let oriented = if geo.orientation < 0 {
                [p[1], p[0], p[2]]
            } else {
                p
            };
            (pair, oriented)
        })
        .collect();
    let pair_difficulty = geometry
        .iter()
        .map(|(&pair, geo)| (pair, geo.difficulty))
        .collect();
    let params = MixtureParams {
        protocol,
        expert_mixing: data
            .experts
            .iter()
            .zip(&best.pi)
            .map(|(id, table)| {
                (
                    id.clone(),
                    RelationClass::ALL
                        .iter()
                        .map(|&c| (c, table[c.index()]))
                        .collect(),
                )
            })
            .collect(),
        class_mixing: RelationClass::ALL
            .iter()
            .map(|&c| (c, average[c.index()]))
            .collect(),
        mu: best.mu,
        sigma_directed: best.sigma_pm,
        sigma_null: best.sigma_zero,
        reliability: data
            .experts
            .iter()
            .cloned()
            .zip(best.f.iter().copied())
            .collect(),
        pair_mixing,
        pair_difficulty,
    };
    Ok(EmFit {
        params,
        log_likelihood: final_ll,
        trace,
        iterations,
    })
}

/// Mechanism responsibilities `(+, -, 0)` of every response, in the
/// canonical orientation of its pair, under fitted parameters.
pub fn responsibilities(
    data: &MixtureData,
    candidate: &Dag,
    params: &MixtureParams,
) -> Vec<[f64; 3]> {
    let geometry = pair_geometry(candidate);
    let mut state = State::initial(data.protocol, data.experts.len());
    state.mu = params.mu;
    state.sigma_pm = params.sigma_directed;
    state.sigma_zero = params.sigma_null;
    for (m, id) in data.experts.iter().enumerate() {
        state.f[m] = params.reliability[id];
        for c in RelationClass::ALL {
            state.pi[m][c.index()] = params.expert_mixing[id][&c];
        }
    }
    let ln_pi: Vec<Table> = state
        .pi
        .iter()
        .map(|t| t.map(|row| row.map(f64::ln)))
        .collect();
    data.obs
        .iter()
        .map(|&(m, u, v, y)| {
            let geo = geometry[&(u, v)];
            let cell = Cell {
                expert: m,
                class: geo.class.index(),
                difficulty: geo.difficulty,
                y: y * geo.orientation,
                count: 1.0,
            };
            let lj = log_joint(data.protocol, &state, &ln_pi, &cell);
            let norm = log_sum_exp(&lj);
            let r = lj.map(|x| (x - norm).exp());
            if geo.orientation < 0 {
                [r[1], r[0], r[2]]
            } else {
                r
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{all_queries, make_profile, Archetype, Query, Response, SimulatedExpert};
    use crate::graph::asia_fixture;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn ordering(expert: &str, u: &str, v: &str, y: i32) -> Response {
        Response::new(expert, Query::new(u, v).unwrap(), Protocol::OrderingWise, y).unwrap()
    }

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn dominant_positive_component() {
        let d: KnowledgeSet = (0..10).map(|_| ordering("e", "x0", "x1", 10)).collect();
        let data = MixtureData::new(&d, &names(2)).unwrap();
        for edges in [vec![], vec![(0, 1)]] {
            let g = Dag::from_indices(names(2), edges).unwrap();
            let fit = em_fit(&data, &g).unwrap();
            for r in responsibilities(&data, &g, &fit.params) {
                assert!(r[0] > 0.99, "{r:?}");
            }
            assert_monotone(&fit.trace);
        }
    }

    #[test]
    fn symmetric_answers_balance_directions() {
        let d: KnowledgeSet = (0..6)
            .map(|i| ordering("e", "x0", "x1", if i % 2 == 0 { 7 } else { -7 }))
            .collect();
        let data = MixtureData::new(&d, &names(2)).unwrap();
        let g = Dag::empty(&names(2)).unwrap();
        let fit = em_fit(&data, &g).unwrap();
        let pi = fit.params.pair_mixing[&(0, 1)];
        assert!((pi[0] - pi[1]).abs() < 1e-9, "{pi:?}");
    }

    #[test]
    fn monotone_and_normalized_on_crowds() {
        let truth = asia_fixture();
        let queries = all_queries(&truth);
        for protocol in [Protocol::EdgeWise, Protocol::OrderingWise] {
            for seed in 0..5u64 {
                let mut d = KnowledgeSet::default();
                for (i, a) in [
                    Archetype::Imperfect,
                    Archetype::Uncertain,
                    Archetype::BadActor,
                    Archetype::Imperfect,
                ]
                .into_iter()
                .enumerate()
                {
                    let mut e = SimulatedExpert::new(
                        format!("e{i}"),
                        make_profile(a),
                        &truth,
                        seed * 10 + i as u64,
                    );
                    d.extend(e.answer_all(&queries, protocol).unwrap());
                }
                let data = MixtureData::new(&d, truth.nodes()).unwrap();
                for g in [truth.clone(), Dag::empty(truth.nodes()).unwrap()] {
                    let fit = em_fit(&data, &g).unwrap();
                    assert_monotone(&fit.trace);
                    assert!(fit.log_likelihood.is_finite());
                    for r in responsibilities(&data, &g, &fit.params) {
                        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                    for pi in fit.params.expert_mixing.values().flat_map(|t| t.values()) {
                        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                    assert!(fit.params.reliability.values().all(|&f| f > 0.0));
                    assert!(fit
                        .params
                        .pair_difficulty
                        .values()
                        .all(|&g| g > 0.0 && g <= 1.0));
                }
            }
        }
    }

    #[test]
    fn truth_fits_better_than_empty() {
        let truth = asia_fixture();
        let mut e = SimulatedExpert::new("o", make_profile(Archetype::Omniscient), &truth, 0);
        let d = e
            .answer_all(&all_queries(&truth), Protocol::EdgeWise)
            .unwrap();
        let data = MixtureData::new(&d, truth.nodes()).unwrap();
        let good = em_fit(&data, &truth).unwrap().log_likelihood;
        let bad = em_fit(&data, &Dag::empty(truth.nodes()).unwrap())
            .unwrap()
            .log_likelihood;
        assert!(good > bad + 10.0, "{good} vs {bad}");
    }

    #[test]
    fn rejects_empty_and_mixed() {
        assert_eq!(
            MixtureData::new(&KnowledgeSet::default(), &names(2)).unwrap_err(),
            Error::EmptyResponses
        );
        let mixed: KnowledgeSet = vec![
            ordering("e", "x0", "x1", 3),
            Response::new("e", Query::new("x0", "x1").unwrap(), Protocol::EdgeWise, 1).unwrap(),
        ]
        .into_iter()
        .collect();
        assert!(matches!(
            MixtureData::new(&mixed, &names(2)),
            Err(Error::ProtocolMismatch { .. })
        ));
    }

    #[test]
    fn reliability_solver_hits_stationary_point() {
        let emitted = [(3.0, 0.5), (1.0, 1.0)];
        let f = edge_reliability(&emitted, 2.5, 1.0);
        let slope: f64 = emitted
            .iter()
            .map(|&(a, g)| a * g / (f * g).exp_m1())
            .sum::<f64>()
            - 2.5;
        assert!(slope.abs() < 1e-9, "{slope}");
    }
}
