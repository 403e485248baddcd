//! Directed acyclic graphs over named variables.
//!
//! Node names are kept in sorted order, so node indices follow the
//! lexicographic order of names. A pair `(i, j)` with `i < j` is therefore
//! the canonical orientation of an unordered variable pair everywhere in
//! this crate.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation between the two members of a canonical pair `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairRelation {
    /// `u -> v`
    Forward,
    /// `v -> u`
    Backward,
    None,
}

impl PairRelation {
    pub fn value(self) -> i32 {
        match self {
            PairRelation::Forward => 1,
            PairRelation::Backward => -1,
            PairRelation::None => 0,
        }
    }

    pub fn from_sign(value: i32) -> Self {
        match value.signum() {
            1 => PairRelation::Forward,
            -1 => PairRelation::Backward,
            _ => PairRelation::None,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            PairRelation::Forward => PairRelation::Backward,
            PairRelation::Backward => PairRelation::Forward,
            PairRelation::None => PairRelation::None,
        }
    }
}

/// All canonical pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn canonical_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push((i, j));
        }
    }
    out
}

/// Returns one directed cycle (as node indices, first node repeated at the
/// end) if the edge list over `n` nodes contains any.
pub fn find_cycle(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Option<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (u, v) in edges {
        adj[u].push(v);
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < adj[node].len() {
                let child = adj[node][*next];
                *next += 1;
                match state[child] {
                    0 => {
                        state[child] = 1;
                        parent[child] = node;
                        stack.push((child, 0));
                    }
                    1 => {
                        let mut cycle = vec![child];
                        let mut cur = node;
                        while cur != child {
                            cycle.push(cur);
                            cur = parent[cur];
                        }
                        cycle.push(child);
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state[node] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// A directed acyclic graph. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Dag {
    nodes: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
}

impl Dag {
    /// Builds a graph from node names and named edges.
    pub fn new<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let mut names: Vec<String> = nodes.iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        for w in names.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidGraph(format!("duplicate node `{}`", w[0])));
            }
        }
        if names.iter().any(|n| n.is_empty()) {
            return Err(Error::InvalidGraph("empty node name".into()));
        }
        let lookup = |s: &str| {
            names
                .binary_search_by(|n| n.as_str().cmp(s))
                .map_err(|_| Error::UnknownNode(s.to_string()))
        };
        let mut idx = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            let (u, v) = (lookup(u.as_ref())?, lookup(v.as_ref())?);
            idx.push((u, v));
        }
        Self::from_indices(names, idx)
    }

    /// Builds a graph from sorted, unique node names and index edges.
    pub fn from_indices(
        nodes: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        debug_assert!(
            nodes.windows(2).all(|w| w[0] < w[1]),
            "node names must be sorted"
        );
        let n = nodes.len();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop on `{}`", nodes[u])));
            }
            if !set.insert((u, v)) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge {} -> {}",
                    nodes[u], nodes[v]
                )));
            }
        }
        if let Some(cycle) = find_cycle(n, set.iter().copied()) {
            return Err(Error::Cycle(
                cycle.into_iter().map(|i| nodes[i].clone()).collect(),
            ));
        }
        let mut children = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        for &(u, v) in &set {
            children[u].push(v);
            parents[v].push(u);
        }
        Ok(Dag {
            nodes,
            edges: set,
            children,
            parents,
        })
    }

    /// Graph with the given nodes and no edges.
    pub fn empty<S: AsRef<str>>(nodes: &[S]) -> Result<Self> {
        Self::new::<S>(nodes, &[])
    }

    /// Same node set, different edges.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::from_indices(self.nodes.clone(), edges)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(u, v)| (self.nodes[u].clone(), self.nodes[v].clone()))
            .collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u, v))
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    pub fn parents(&self, u: usize) -> &[usize] {
        &self.parents[u]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .binary_search_by(|n| n.as_str().cmp(name))
            .map_err(|_| Error::UnknownNode(name.to_string()))
    }

    pub fn same_nodes(&self, other: &Dag) -> bool {
        self.nodes == other.nodes
    }

    /// Relation of the canonical pair `(u, v)` in this graph.
    pub fn relation(&self, u: usize, v: usize) -> PairRelation {
        if self.has_edge(u, v) {
            PairRelation::Forward
        } else if self.has_edge(v, u) {
            PairRelation::Backward
        } else {
            PairRelation::None
        }
    }

    /// Kahn's algorithm; ties go to the smallest node name.
    pub fn topological_indices(&self) -> Vec<usize> {
        let n = self.n();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(u)) = ready.pop() {
            order.push(u);
            for &c in &self.children[u] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        debug_assert_eq!(order.len(), n);
        order
    }

    pub fn topological_order(&self) -> Vec<&str> {
        self.topological_indices()
            .into_iter()
            .map(|i| self.nodes[i].as_str())
            .collect()
    }

    /// Shortest directed path lengths from `src` (BFS). `None` when unreachable.
    pub fn distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &c in &self.children[u] {
                if dist[c].is_none() {
                    dist[c] = Some(d + 1);
                    queue.push_back(c);
                }
            }
        }
        dist
    }

    /// All-pairs shortest directed path lengths.
    pub fn path_lengths(&self) -> Vec<Vec<Option<usize>>> {
        (0..self.n()).map(|u| self.distances_from(u)).collect()
    }

    pub fn path_len(&self, u: usize, v: usize) -> Option<usize> {
        if u == v {
            return Some(0);
        }
        self.distances_from(u)[v]
    }

    /// Shortest directed path length from `u` to `v`, by name.
    pub fn reachable(&self, u: &str, v: &str) -> Result<Option<usize>> {
        let (u, v) = (self.index_of(u)?, self.index_of(v)?);
        Ok(self.path_len(u, v))
    }

    /// Longest directed path from any root to each node.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.n()];
        for u in self.topological_indices() {
            for &c in &self.children[u] {
                depth[c] = depth[c].max(depth[u] + 1);
            }
        }
        depth
    }

    /// Drops every edge implied by a longer directed path.
    pub fn transitive_reduction(&self) -> Dag {
        let keep: Vec<(usize, usize)> = self
            .edges()
            .filter(|&(u, v)| {
                !self.children[u]
                    .iter()
                    .any(|&w| w != v && self.path_len(w, v).is_some())
            })
            .collect();
        self.with_edges(keep).expect("subgraph of a DAG is acyclic")
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            nodes: self.nodes.clone(),
            edges: self.edge_names().into_iter().map(|(u, v)| [u, v]).collect(),
            descriptions: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("network serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.to_dag()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Structural Hamming distance: number of canonical pairs whose relation
/// differs. A reversed edge counts once.
pub fn shd(a: &Dag, b: &Dag) -> Result<usize> {
    if !a.same_nodes(b) {
        return Err(Error::NodeSetMismatch);
    }
    Ok(canonical_pairs(a.n())
        .into_iter()
        .filter(|&(u, v)| a.relation(u, v) != b.relation(u, v))
        .count())
}

/// On-disk network description: `{"nodes": [...], "edges": [["u","v"], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<[String; 2]>,
    /// Optional human-readable variable descriptions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptions: BTreeMap<String, String>,
}

impl NetworkFile {
    pub fn to_dag(&self) -> Result<Dag> {
        let edges: Vec<(&str, &str)> = self
            .edges
            .iter()
            .map(|[u, v]| (u.as_str(), v.as_str()))
            .collect();
        let nodes: Vec<&str> = self.nodes.iter().map(String::as_str).collect();
        Dag::new(&nodes, &edges)
    }
}

pub const ASIA_NODES: [&str; 8] = [
    "VisitAsia",
    "Tuberculosis",
    "Smoking",
    "LungCancer",
    "Bronchitis",
    "TBorCancer",
    "Xray",
    "Dyspnea",
];

const ASIA_EDGES: [(&str, &str); 8] = [
    ("VisitAsia", "Tuberculosis"),
    ("Smoking", "LungCancer"),
    ("Smoking", "Bronchitis"),
    ("Tuberculosis", "TBorCancer"),
    ("LungCancer", "TBorCancer"),
    ("TBorCancer", "Xray"),
    ("TBorCancer", "Dyspnea"),
    ("Bronchitis", "Dyspnea"),
];

/// The eight-variable chest-clinic network.
pub fn asia_fixture() -> Dag {
    Dag::new(&ASIA_NODES, &ASIA_EDGES).expect("fixture is a DAG")
}

pub fn asia_descriptions() -> BTreeMap<String, String> {
    [
        ("VisitAsia", "Visit to Asia"),
        ("Tuberculosis", "Tuberculosis"),
        ("Smoking", "Smoking"),
        ("LungCancer", "Lung Cancer"),
        ("Bronchitis", "Bronchitis"),
        ("TBorCancer", "Either tuberculosis or lung cancer"),
        ("Xray", "Positive chest X-ray"),
        ("Dyspnea", "Dyspnea (shortness of breath)"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn asia_network_file() -> NetworkFile {
    let mut file = asia_fixture().to_file();
    file.descriptions = asia_descriptions();
    file
}

/// Resolves a fixture name (`asia`) or a path to a network JSON file.
pub fn load_network(source: &str) -> Result<NetworkFile> {
    if source.eq_ignore_ascii_case("asia") {
        return Ok(asia_network_file());
    }
    let file: NetworkFile = serde_json::from_str(&std::fs::read_to_string(source)?)?;
    file.to_dag()?;
    Ok(file)
}
