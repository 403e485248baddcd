//! Exhaustive DAG enumeration for small node counts.

use crate::error::{Error, Result};
use crate::graph::{canonical_pairs, find_cycle, Dag};

pub const MAX_ENUMERATION_NODES: usize = 4;

/// Every DAG on `n` labeled nodes named `X1..Xn`.
pub fn enumerate_dags(n: usize) -> Result<Vec<Dag>> {
    let names: Vec<String> = (1..=n).map(|i| format!("X{i}")).collect();
    enumerate_dags_over(&names)
}

/// Every DAG over the given node names (at most four).
pub fn enumerate_dags_over<S: AsRef<str>>(nodes: &[S]) -> Result<Vec<Dag>> {
    let n = nodes.len();
    if n > MAX_ENUMERATION_NODES {
        return Err(Error::TooLarge(n));
    }
    let template = Dag::empty(nodes)?;
    let pairs = canonical_pairs(n);
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for code in 0..total {
        let mut c = code;
        let mut edges = Vec::with_capacity(pairs.len());
        for &(u, v) in &pairs {
            match c % 3 {
                1 => edges.push((u, v)),
                2 => edges.push((v, u)),
                _ => {}
            }
            c /= 3;
        }
        if find_cycle(n, edges.iter().copied()).is_none() {
            out.push(template.with_edges(edges)?);
        }
    }
    Ok(out)
}
