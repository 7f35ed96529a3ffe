//! Sparse undirected graphs, symmetric normalization with self-loops, and
//! personalized-PageRank evidence diffusion.

use std::rc::Rc;

use thiserror::Error;

use crate::autodiff::{SparseSym, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge ({}, {}) references a node outside 0..{num_nodes}", edge.0, edge.1)]
    NodeOutOfRange { edge: (usize, usize), num_nodes: usize },
}

/// Undirected graph stored as canonical edge pairs plus CSR adjacency with
/// both directions materialized. No self-loops are stored; normalization
/// adds them.
#[derive(Clone, Debug)]
pub struct Graph {
    num_nodes: usize,
    /// Deduplicated pairs with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical undirected edges, each once, `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }
}

/// Canonicalize an edge list: drop self-loops, fold (j,i) duplicates, build
/// sorted CSR. Out-of-range endpoints are a load error naming the pair.
pub fn build_graph(num_nodes: usize, edge_list: &[(usize, usize)]) -> Result<Graph, GraphError> {
    let mut edges = Vec::with_capacity(edge_list.len());
    for &(a, b) in edge_list {
        if a >= num_nodes || b >= num_nodes {
            return Err(GraphError::NodeOutOfRange { edge: (a, b), num_nodes });
        }
        if a == b {
            continue; // self-loops live only in the normalized matrix
        }
        edges.push((a.min(b), a.max(b)));
    }
    edges.sort_unstable();
    edges.dedup();

    let mut degree = vec![0usize; num_nodes];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mut row_ptr = vec![0usize; num_nodes + 1];
    for i in 0..num_nodes {
        row_ptr[i + 1] = row_ptr[i] + degree[i];
    }
    let mut col_idx = vec![0usize; row_ptr[num_nodes]];
    let mut cursor = row_ptr.clone();
    for &(a, b) in &edges {
        col_idx[cursor[a]] = b;
        cursor[a] += 1;
        col_idx[cursor[b]] = a;
        cursor[b] += 1;
    }
    // Edges were inserted in sorted order for the lower endpoint only; sort
    // every neighbor list to restore the invariant for both directions.
    for i in 0..num_nodes {
        col_idx[row_ptr[i]..row_ptr[i + 1]].sort_unstable();
    }
    Ok(Graph { num_nodes, edges, row_ptr, col_idx })
}

/// Symmetrically normalized adjacency with self-loops:
/// `D^{-1/2} (A + I) D^{-1/2}` where `D` counts degrees of `A + I`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    matrix: Rc<SparseSym>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.matrix.n
    }

    pub fn matrix(&self) -> &Rc<SparseSym> {
        &self.matrix
    }

    /// Entries of row `i` as (column, value), sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let m = &*self.matrix;
        (m.row_ptr[i]..m.row_ptr[i + 1]).map(move |e| (m.col_idx[e], m.values[e]))
    }
}

pub fn normalize(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes;
    // Degree of A + I; an isolated node keeps a self-loop of weight 1.
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();

    let mut row_ptr = vec![0usize; n + 1];
    for i in 0..n {
        row_ptr[i + 1] = row_ptr[i] + g.degree(i) + 1;
    }
    let mut col_idx = vec![0usize; row_ptr[n]];
    let mut values = vec![0.0; row_ptr[n]];
    for i in 0..n {
        let mut e = row_ptr[i];
        let mut placed_self = false;
        for &j in g.neighbors(i) {
            if !placed_self && j > i {
                col_idx[e] = i;
                values[e] = inv_sqrt[i] * inv_sqrt[i];
                placed_self = true;
                e += 1;
            }
            col_idx[e] = j;
            values[e] = inv_sqrt[i] * inv_sqrt[j];
            e += 1;
        }
        if !placed_self {
            col_idx[e] = i;
            values[e] = inv_sqrt[i] * inv_sqrt[i];
        }
    }
    NormalizedAdjacency { matrix: Rc::new(SparseSym { n, row_ptr, col_idx, values }) }
}

/// Personalized-PageRank diffusion
/// `beta^{(l+1)} = (1 - teleport) * A_hat * beta^{(l)} + teleport * beta^{(0)}`
/// run for `layers` iterations inside the tape, so gradients flow back to
/// `beta0`. Diffusion itself has no learned parameters.
pub fn ppr_diffuse(
    beta0: &Tensor,
    adj: &NormalizedAdjacency,
    teleport: f64,
    layers: usize,
) -> Tensor {
    assert!(
        teleport > 0.0 && teleport <= 1.0,
        "ppr_diffuse: teleport must lie in (0, 1], got {teleport}"
    );
    // Tolerates NaN (a diverged run must surface as a non-finite loss, not
    // a panic here); only genuinely negative evidence is a caller bug.
    debug_assert!(
        beta0.values().iter().all(|&v| !(v < 0.0)),
        "ppr_diffuse: beta0 must be nonnegative"
    );
    if teleport == 1.0 || layers == 0 {
        return beta0.clone();
    }
    let teleport_term = beta0.scale(teleport);
    let mut beta = beta0.clone();
    for _ in 0..layers {
        beta = beta.spmm(adj.matrix()).scale(1.0 - teleport).add(&teleport_term);
    }
    beta
}

/// Fraction of edges whose endpoints share a label. An empty edge set is
/// vacuously homophilous (1.0).
pub fn homophily(g: &Graph, labels: &[usize]) -> f64 {
    assert_eq!(
        labels.len(),
        g.num_nodes(),
        "homophily: {} labels for {} nodes",
        labels.len(),
        g.num_nodes()
    );
    if g.edges.is_empty() {
        return 1.0;
    }
    let same = g.edges.iter().filter(|&&(a, b)| labels[a] == labels[b]).count();
    same as f64 / g.edges.len() as f64
}
