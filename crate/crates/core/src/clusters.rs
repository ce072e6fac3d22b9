//! Disjoint partition of the bath into strongly coupled clusters.
//!
//! Edges join pairs whose dipolar coupling reaches the threshold. Connected
//! components that exceed `max_size` are split by deleting their weakest edge
//! (ties broken by lowest `(j, k)` index pair) and recomputing components,
//! until every piece fits.

use serde::{Deserialize, Serialize};

use crate::hamiltonian::dipolar_pair_term;
use crate::lattice::SpinBath;
use crate::units;
use crate::{Error, Result};

/// Default edge threshold, 2π × 0.1 kHz.
pub fn default_threshold() -> f64 {
    units::khz(0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Each cluster sorted ascending; clusters ordered by their first index.
    pub clusters: Vec<Vec<usize>>,
    pub max_size: usize,
    /// rad/µs.
    pub coupling_threshold: f64,
}

impl Partition {
    /// Every site in one cluster.
    pub fn single(n: usize) -> Self {
        Self {
            clusters: if n == 0 { vec![] } else { vec![(0..n).collect()] },
            max_size: n.max(1),
            coupling_threshold: 0.0,
        }
    }

    pub fn largest(&self) -> usize {
        self.clusters.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Largest-magnitude entry of the pair's dipolar tensor, rad/µs.
pub fn coupling_strength(bath: &SpinBath, j: usize, k: usize) -> Result<f64> {
    if j == k {
        return Err(Error::InvalidParameter(format!("coupling of site {j} with itself")));
    }
    for &i in &[j, k] {
        if i >= bath.len() {
            return Err(Error::IndexOutOfRange { index: i, len: bath.len() });
        }
    }
    let d = dipolar_pair_term(&bath.sites[j].position, &bath.sites[k].position, bath.sites[j].gamma_n)
        .map_err(|_| Error::CoincidentSites(j, k))?;
    Ok(d.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    j: usize,
    k: usize,
    w: f64,
}

fn components(nodes: &[usize], edges: &[Edge], n_total: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n_total).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for e in edges {
        let (a, b) = (find(&mut parent, e.j), find(&mut parent, e.k));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &v in nodes {
        let r = find(&mut parent, v);
        groups.entry(r).or_default().push(v);
    }
    let mut out: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    out.sort_by_key(|g| g[0]);
    out
}

fn split(nodes: Vec<usize>, mut edges: Vec<Edge>, max_size: usize, n_total: usize, out: &mut Vec<Vec<usize>>) {
    if nodes.len() <= max_size {
        out.push(nodes);
        return;
    }
    // weakest first, ties by index pair
    edges.sort_by(|a, b| a.w.total_cmp(&b.w).then(a.j.cmp(&b.j)).then(a.k.cmp(&b.k)));
    let mut removed = 0;
    loop {
        removed += 1;
        let remaining = &edges[removed..];
        let pieces = components(&nodes, remaining, n_total);
        if pieces.len() > 1 {
            for piece in pieces {
                let sub: Vec<Edge> = remaining
                    .iter()
                    .filter(|e| piece.binary_search(&e.j).is_ok())
                    .copied()
                    .collect();
                split(piece, sub, max_size, n_total, out);
            }
            return;
        }
    }
}

pub fn partition_bath(bath: &SpinBath, max_size: usize, threshold: f64) -> Result<Partition> {
    if max_size < 1 {
        return Err(Error::InvalidParameter("max_size must be at least 1".into()));
    }
    let n = bath.len();
    let mut edges = Vec::new();
    if threshold.is_finite() {
        for j in 0..n {
            for k in (j + 1)..n {
                let w = coupling_strength(bath, j, k)?;
                if w >= threshold {
                    edges.push(Edge { j, k, w });
                }
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let mut clusters = Vec::new();
    for comp in components(&all, &edges, n) {
        let sub: Vec<Edge> = edges
            .iter()
            .filter(|e| comp.binary_search(&e.j).is_ok())
            .copied()
            .collect();
        split(comp, sub, max_size, n, &mut clusters);
    }
    clusters.sort_by_key(|g| g[0]);
    Ok(Partition { clusters, max_size, coupling_threshold: threshold })
}
