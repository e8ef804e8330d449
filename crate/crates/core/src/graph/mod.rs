//! Undirected graphs with dense adjacency and continuous node features.
//!
//! Adjacency never stores self-loops; layers insert them when they need
//! `A + I` or `A + (1 + eps) I`.

mod dataset;
mod synthetic;
mod transform;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetError, GraphRecord, Split};
pub use synthetic::{generate_synthetic_dataset, has_triangle, ClassRule};
pub use transform::{apply_transform, ComponentEdit, TransformSpec};

use crate::tensor::Matrix;
use std::collections::VecDeque;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("features must have at least one column")]
    ZeroFeatureDim,
    #[error("adjacency is {rows}x{cols}, expected a square matrix matching {nodes} feature rows")]
    AdjacencyShape {
        rows: usize,
        cols: usize,
        nodes: usize,
    },
    #[error("adjacency entry ({i},{j}) = {value} is not 0 or 1")]
    AdjacencyValue { i: usize, j: usize, value: f64 },
    #[error("adjacency is not symmetric at ({i},{j})")]
    Asymmetric { i: usize, j: usize },
    #[error("self-loop at node {0}; self-loops are added by layers, not stored")]
    SelfLoop(usize),
    #[error("feature entry ({i},{j}) is not finite")]
    NonFinite { i: usize, j: usize },
    #[error("edge ({u},{v}) out of range for {n} nodes")]
    EdgeOutOfRange { u: usize, v: usize, n: usize },
    #[error("duplicate edge ({u},{v})")]
    DuplicateEdge { u: usize, v: usize },
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("{what}: expected {expected:?}, got {got:?}")]
    Dimension {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("link transform entry ({i},{j}) = {value} is not in {{-1,0,1}}")]
    LinkDelta { i: usize, j: usize, value: f64 },
    #[error("link transform leaves adjacency entry ({i},{j}) = {value} outside {{0,1}}")]
    LinkResult { i: usize, j: usize, value: f64 },
    #[error("removal set is not a union of components: edge ({inside},{outside}) crosses it")]
    NotComponentClosed { inside: usize, outside: usize },
    #[error("removal index {index} out of range for {n} nodes")]
    RemovalOutOfRange { index: usize, n: usize },
    #[error("node {0} appears in more than one removal")]
    OverlappingRemoval(usize),
    #[error("transformation would remove every node")]
    RemovesAllNodes,
    #[error("invalid permutation: {0}")]
    Permutation(String),
}

/// An undirected graph `G = (A, X)` with an optional binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    id: String,
    adjacency: Matrix,
    features: Matrix,
    label: Option<u8>,
}

impl Graph {
    /// Validates and builds a graph from a dense 0/1 adjacency matrix.
    pub fn new(
        id: impl Into<String>,
        adjacency: Matrix,
        features: Matrix,
        label: Option<u8>,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if features.cols() == 0 {
            return Err(GraphError::ZeroFeatureDim);
        }
        if adjacency.shape() != (n, n) {
            return Err(GraphError::AdjacencyShape {
                rows: adjacency.rows(),
                cols: adjacency.cols(),
                nodes: n,
            });
        }
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(GraphError::AdjacencyValue { i, j, value: a });
                }
                if a != adjacency[(j, i)] {
                    return Err(GraphError::Asymmetric { i, j });
                }
            }
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::SelfLoop(i));
            }
        }
        for i in 0..n {
            for j in 0..features.cols() {
                if !features[(i, j)].is_finite() {
                    return Err(GraphError::NonFinite { i, j });
                }
            }
        }
        if let Some(y) = label {
            if y > 1 {
                return Err(GraphError::Label(y));
            }
        }
        Ok(Self {
            id: id.into(),
            adjacency,
            features,
            label,
        })
    }

    /// Builds a graph from an undirected edge list. Each edge may be given in
    /// either orientation but only once.
    pub fn from_edges(
        id: impl Into<String>,
        edges: &[(usize, usize)],
        features: Matrix,
        label: Option<u8>,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        let mut adjacency = Matrix::zeros(n, n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EdgeOutOfRange { u, v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if adjacency[(u, v)] != 0.0 {
                return Err(GraphError::DuplicateEdge { u, v });
            }
            adjacency[(u, v)] = 1.0;
            adjacency[(v, u)] = 1.0;
        }
        Self::new(id, adjacency, features, label)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn label(&self) -> Option<u8> {
        self.label
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_label(mut self, label: Option<u8>) -> Result<Self, GraphError> {
        if let Some(y) = label {
            if y > 1 {
                return Err(GraphError::Label(y));
            }
        }
        self.label = label;
        Ok(self)
    }

    /// Replaces the feature matrix, keeping structure. Shape must match.
    pub fn with_features(&self, features: Matrix) -> Result<Self, GraphError> {
        if features.shape() != self.features.shape() {
            return Err(GraphError::Dimension {
                what: "features",
                expected: self.features.shape(),
                got: features.shape(),
            });
        }
        Self::new(self.id.clone(), self.adjacency.clone(), features, self.label)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[(u, v)] != 0.0
    }

    /// Edges as `(u, v)` with `u < v`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if self.has_edge(u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count())
            .map(|i| self.adjacency.row(i).iter().filter(|&&a| a != 0.0).count())
            .collect()
    }

    /// `D = sum_k d_k`, twice the edge count.
    pub fn total_degree(&self) -> usize {
        self.degrees().iter().sum()
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(u)
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != 0.0)
            .map(|(v, _)| v)
    }

    /// Induced subgraph on `nodes`, in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph, GraphError> {
        let n = self.node_count();
        if let Some(&index) = nodes.iter().find(|&&i| i >= n) {
            return Err(GraphError::RemovalOutOfRange { index, n });
        }
        let adjacency = Matrix::from_fn(nodes.len(), nodes.len(), |i, j| {
            self.adjacency[(nodes[i], nodes[j])]
        });
        Graph::new(
            self.id.clone(),
            adjacency,
            self.features.select_rows(nodes),
            self.label,
        )
    }
}

/// Partition of node indices into connected components.
///
/// Components are ordered by their smallest node; nodes within a component
/// are ascending.
pub fn connected_components(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Relabels nodes so that new node `i` is old node `perm[i]`.
///
/// Equivalent to `A' = P A P^T`, `X' = P X` with `P[i][perm[i]] = 1`.
pub fn permute(g: &Graph, perm: &[usize]) -> Result<Graph, GraphError> {
    let n = g.node_count();
    if perm.len() != n {
        return Err(GraphError::Permutation(format!(
            "length {} for {} nodes",
            perm.len(),
            n
        )));
    }
    let mut hit = vec![false; n];
    for &p in perm {
        if p >= n || hit[p] {
            return Err(GraphError::Permutation(format!(
                "index {p} is out of range or repeated"
            )));
        }
        hit[p] = true;
    }
    g.induced_subgraph(perm)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
