//! Graph-level transformations: feature edits, link edits, and
//! adding/removing isolated components, plus ordered composites of these.

use super::{Graph, GraphError};
use crate::tensor::Matrix;

/// One edit of an isolated-component transformation.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentEdit {
    /// Append a new component with no links to the existing nodes.
    Add(Graph),
    /// Remove these host nodes. The set must be closed under adjacency.
    Remove(Vec<usize>),
}

impl ComponentEdit {
    /// `+1` for additions, `-1` for removals.
    pub fn indicator(&self) -> f64 {
        match self {
            ComponentEdit::Add(_) => 1.0,
            ComponentEdit::Remove(_) => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    /// `X' = X + delta`
    Feature { delta: Matrix },
    /// `A' = A + delta`, entries of `delta` in `{-1, 0, 1}`.
    Link { delta: Matrix },
    /// Removals index the input graph; survivors keep their relative order
    /// and additions are appended in list order.
    IsolatedComponents { edits: Vec<ComponentEdit> },
    /// Applied left to right.
    Composite { steps: Vec<TransformSpec> },
}

impl TransformSpec {
    pub fn identity(g: &Graph) -> Self {
        TransformSpec::Feature {
            delta: Matrix::zeros(g.node_count(), g.feature_dim()),
        }
    }

    /// Link transform for `n` nodes that adds and removes the given edges.
    pub fn link_edits(n: usize, add: &[(usize, usize)], remove: &[(usize, usize)]) -> Self {
        let mut delta = Matrix::zeros(n, n);
        for &(u, v) in add {
            delta[(u, v)] = 1.0;
            delta[(v, u)] = 1.0;
        }
        for &(u, v) in remove {
            delta[(u, v)] = -1.0;
            delta[(v, u)] = -1.0;
        }
        TransformSpec::Link { delta }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TransformSpec::Feature { .. } => "feature",
            TransformSpec::Link { .. } => "link",
            TransformSpec::IsolatedComponents { .. } => "isolated_component",
            TransformSpec::Composite { .. } => "composite",
        }
    }
}

/// Applies `spec` to `g`, returning a new graph. `g` is never modified.
pub fn apply_transform(g: &Graph, spec: &TransformSpec) -> Result<Graph, GraphError> {
    match spec {
        TransformSpec::Feature { delta } => {
            let shape = g.features().shape();
            if delta.shape() != shape {
                return Err(GraphError::Dimension {
                    what: "feature delta",
                    expected: shape,
                    got: delta.shape(),
                });
            }
            let x = g.features().add(delta).expect("shape checked");
            Graph::new(g.id(), g.adjacency().clone(), x, g.label())
        }
        TransformSpec::Link { delta } => {
            let n = g.node_count();
            if delta.shape() != (n, n) {
                return Err(GraphError::Dimension {
                    what: "link delta",
                    expected: (n, n),
                    got: delta.shape(),
                });
            }
            for i in 0..n {
                for j in 0..n {
                    let d = delta[(i, j)];
                    if d != 0.0 && d != 1.0 && d != -1.0 {
                        return Err(GraphError::LinkDelta { i, j, value: d });
                    }
                    let a = g.adjacency()[(i, j)] + d;
                    if a != 0.0 && a != 1.0 {
                        return Err(GraphError::LinkResult { i, j, value: a });
                    }
                }
            }
            let a = g.adjacency().add(delta).expect("shape checked");
            Graph::new(g.id(), a, g.features().clone(), g.label())
        }
        TransformSpec::IsolatedComponents { edits } => apply_component_edits(g, edits),
        TransformSpec::Composite { steps } => {
            let mut current = g.clone();
            for step in steps {
                current = apply_transform(&current, step)?;
            }
            Ok(current)
        }
    }
}

/// Checks that the removals in `edits` are in range, disjoint, and each a
/// union of whole components of `g`. Returns the removal mask.
pub(crate) fn validate_removals(g: &Graph, edits: &[ComponentEdit]) -> Result<Vec<bool>, GraphError> {
    let n = g.node_count();
    let mut removed = vec![false; n];
    for edit in edits {
        let ComponentEdit::Remove(nodes) = edit else {
            continue;
        };
        let mut this = vec![false; n];
        for &i in nodes {
            if i >= n {
                return Err(GraphError::RemovalOutOfRange { index: i, n });
            }
            if removed[i] || this[i] {
                return Err(GraphError::OverlappingRemoval(i));
            }
            this[i] = true;
        }
        for &u in nodes {
            if let Some(v) = g.neighbors(u).find(|&v| !this[v]) {
                return Err(GraphError::NotComponentClosed { inside: u, outside: v });
            }
        }
        for (r, t) in removed.iter_mut().zip(this) {
            *r |= t;
        }
    }
    Ok(removed)
}

fn apply_component_edits(g: &Graph, edits: &[ComponentEdit]) -> Result<Graph, GraphError> {
    let removed = validate_removals(g, edits)?;
    for edit in edits {
        if let ComponentEdit::Add(c) = edit {
            if c.feature_dim() != g.feature_dim() {
                return Err(GraphError::Dimension {
                    what: "added component features",
                    expected: (c.node_count(), g.feature_dim()),
                    got: c.features().shape(),
                });
            }
        }
    }

    let keep: Vec<usize> = (0..g.node_count()).filter(|&i| !removed[i]).collect();
    let mut blocks: Vec<(Matrix, Matrix)> = Vec::new();
    if !keep.is_empty() {
        let host = g.induced_subgraph(&keep)?;
        blocks.push((host.adjacency().clone(), host.features().clone()));
    }
    for edit in edits {
        if let ComponentEdit::Add(c) = edit {
            blocks.push((c.adjacency().clone(), c.features().clone()));
        }
    }
    if blocks.is_empty() {
        return Err(GraphError::RemovesAllNodes);
    }

    let total: usize = blocks.iter().map(|(a, _)| a.rows()).sum();
    let mut adjacency = Matrix::zeros(total, total);
    let mut features = Matrix::zeros(0, g.feature_dim());
    let mut offset = 0;
    for (a, x) in &blocks {
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                adjacency[(offset + i, offset + j)] = a[(i, j)];
            }
        }
        features = features.vstack(x).expect("feature dims checked");
        offset += a.rows();
    }
    Graph::new(g.id(), adjacency, features, g.label())
}
