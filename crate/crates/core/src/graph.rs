//! Spatial neighbourhood graphs over observations.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::ingest::WellObservation;

/// Undirected simple graph with edges stored as `(i, j)`, `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialGraph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl SpatialGraph {
    pub fn new(n_vertices: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::validation(format!("self-loop at vertex {a}")));
            }
            if a >= n_vertices || b >= n_vertices {
                return Err(Error::validation(format!("edge ({a}, {b}) out of range for {n_vertices} vertices")));
            }
            out.push((a.min(b), a.max(b)));
        }
        out.sort_unstable();
        out.dedup();
        Ok(SpatialGraph { n_vertices, edges: out })
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn chain(n: usize) -> Self {
        SpatialGraph { n_vertices: n, edges: (1..n).map(|i| (i - 1, i)).collect() }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_vertices];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn incidence(&self) -> EdgeIncidence<'_> {
        EdgeIncidence { graph: self }
    }

    pub fn is_connected(&self) -> bool {
        let labels = connected_components(self, &vec![true; self.n_edges()]);
        labels.iter().all(|&l| l == 0)
    }

    /// Writes the edge list as CSV `i,j` with 0-based indices.
    pub fn write_edge_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j")?;
        for &(i, j) in &self.edges {
            writeln!(out, "{i},{j}")?;
        }
        Ok(())
    }
}

/// Oriented edge-vertex incidence operator `D`, one row per edge with `+1` at
/// the smaller endpoint and `-1` at the larger.
#[derive(Debug, Clone, Copy)]
pub struct EdgeIncidence<'a> {
    graph: &'a SpatialGraph,
}

impl EdgeIncidence<'_> {
    pub fn rows(&self) -> usize {
        self.graph.edges.len()
    }

    /// `out = D x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows());
        for (o, &(i, j)) in out.iter_mut().zip(&self.graph.edges) {
            *o = x[i] - x[j];
        }
    }

    /// `out = D^T w`.
    pub fn apply_transpose(&self, w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&we, &(i, j)) in w.iter().zip(&self.graph.edges) {
            out[i] += we;
            out[j] -= we;
        }
    }

    pub fn diff(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows()];
        self.apply(x, &mut out);
        out
    }

    /// `sum_e |(D x)_e|`.
    pub fn total_variation(&self, x: &[f64]) -> f64 {
        self.graph.edges.iter().map(|&(i, j)| (x[i] - x[j]).abs()).sum()
    }
}

/// kNN graph under an arbitrary dissimilarity, symmetrized by union.
///
/// Neighbours are ranked by `(distance, index)`.
pub fn knn_graph_by<T, F>(items: &[T], k: usize, dist: F) -> Result<SpatialGraph>
where
    F: Fn(&T, &T) -> f64,
{
    let n = items.len();
    if k == 0 {
        return Err(Error::parameter("k must be at least 1"));
    }
    if k >= n {
        return Err(Error::parameter(format!("k = {k} must be smaller than the number of points {n}")));
    }
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist(&items[i], &items[j]), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, cmp);
        edges.extend(cand[..k].iter().map(|&(_, j)| (i, j)));
    }
    SpatialGraph::new(n, edges)
}

/// Euclidean kNN graph over planar points.
pub fn knn_graph(points: &[Point], k: usize) -> Result<SpatialGraph> {
    knn_graph_by(points, k, |a, b| a.dist2(b))
}

/// Parameters of the county-aware graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridParams {
    pub k_within: usize,
    pub k_between: usize,
    pub m_pairs: usize,
}

impl Default for HybridParams {
    fn default() -> Self {
        HybridParams { k_within: 5, k_between: 3, m_pairs: 1 }
    }
}

/// County-aware graph: Euclidean kNN inside each county, plus links between
/// counties whose sample proportions are nearest.
///
/// Each selected county pair is realized by the `m_pairs` spatially closest
/// cross-county observation pairs. Counties smaller than `k_within + 1` use
/// all their other observations as neighbours. Counties with no observations
/// cannot appear because counties are taken from the observations.
pub fn hybrid_graph(obs: &[WellObservation], params: HybridParams) -> Result<SpatialGraph> {
    if params.k_within == 0 || params.k_between == 0 || params.m_pairs == 0 {
        return Err(Error::parameter("hybrid graph parameters must be positive"));
    }
    let n = obs.len();
    let mut by_county: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, o) in obs.iter().enumerate() {
        by_county.entry(o.county_id.as_str()).or_default().push(i);
    }
    let counties: Vec<&Vec<usize>> = by_county.values().collect();

    let mut edges = Vec::new();
    for members in &counties {
        if members.len() < 2 {
            continue;
        }
        let pts: Vec<Point> = members.iter().map(|&i| obs[i].site).collect();
        let k = params.k_within.min(members.len() - 1);
        let local = knn_graph(&pts, k)?;
        edges.extend(local.edges().iter().map(|&(a, b)| (members[a], members[b])));
    }

    if counties.len() >= 2 {
        let proportions: Vec<f64> =
            counties.iter().map(|m| m.iter().map(|&i| f64::from(obs[i].y)).sum::<f64>() / m.len() as f64).collect();
        let k = params.k_between.min(counties.len() - 1);
        let county_graph = knn_graph_by(&proportions, k, |a, b| (a - b).abs())?;
        for &(c, d) in county_graph.edges() {
            edges.extend(closest_pairs(obs, counties[c], counties[d], params.m_pairs));
        }
    }
    SpatialGraph::new(n, edges)
}

/// The `m` closest pairs `(a, b)` with `a` in `left`, `b` in `right`.
fn closest_pairs(obs: &[WellObservation], left: &[usize], right: &[usize], m: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(left.len() * right.len());
    for &a in left {
        for &b in right {
            pairs.push((obs[a].site.dist2(&obs[b].site), a.min(b), a.max(b)));
        }
    }
    let m = m.min(pairs.len());
    let cmp = |x: &(f64, usize, usize), y: &(f64, usize, usize)| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2)));
    if m < pairs.len() {
        pairs.select_nth_unstable_by(m, cmp);
    }
    pairs.truncate(m);
    pairs.into_iter().map(|(_, a, b)| (a, b)).collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Labels of the components formed by the active edges, numbered in order of
/// each component's smallest vertex.
///
/// # Panics
///
/// If `active.len()` differs from the edge count.
pub fn connected_components(graph: &SpatialGraph, active: &[bool]) -> Vec<usize> {
    assert_eq!(active.len(), graph.n_edges(), "edge mask length must equal the edge count");
    let n = graph.n_vertices();
    let mut parent: Vec<usize> = (0..n).collect();
    for (&(i, j), &on) in graph.edges().iter().zip(active) {
        if on {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                // keep the smaller index as root
                let (lo, hi) = (ri.min(rj), ri.max(rj));
                parent[hi] = lo;
            }
        }
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let mut labels = vec![0; n];
    for (v, label) in labels.iter_mut().enumerate() {
        let r = find(&mut parent, v);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        *label = label_of_root[r];
    }
    labels
}
