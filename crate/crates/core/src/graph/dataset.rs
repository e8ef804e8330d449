//! Labelled graph collections and their JSON-lines file format.
//!
//! One graph per line:
//!
//! ```text
//! {"id":"g0","n":3,"edges":[[0,1],[1,2]],"x":[[1.0],[2.0],[3.0]],"y":1,"split":"train"}
//! ```
//!
//! Edges are listed once with `u < v`; the adjacency is their symmetric
//! closure. `y` and `split` are optional.

use super::{Graph, GraphError};
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Graph {
        line: usize,
        #[source]
        source: GraphError,
    },
    #[error("line {line}: edge [{u},{v}] must be listed once as [min,max]; adjacency would not be symmetric")]
    NonCanonicalEdge { line: usize, u: usize, v: usize },
    #[error("line {line}: {rows} feature rows for n = {n}")]
    RowCount { line: usize, n: usize, rows: usize },
    #[error("graph {id:?} has feature dim {got}, dataset uses {expected}")]
    FeatureDim {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate graph id {0:?}")]
    DuplicateId(String),
    #[error("{0} graphs but {1} split assignments")]
    SplitCount(usize, usize),
    #[error("dataset is empty")]
    Empty,
}

/// Wire form of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    #[serde(default)]
    pub id: String,
    pub n: usize,
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl GraphRecord {
    pub fn from_graph(g: &Graph, split: Option<Split>) -> Self {
        GraphRecord {
            id: g.id().to_string(),
            n: g.node_count(),
            edges: g.edges().into_iter().map(|(u, v)| [u, v]).collect(),
            x: g.features().to_rows(),
            y: g.label(),
            split,
        }
    }

    /// Validates the record; `line` is used only for diagnostics.
    pub fn to_graph(&self, line: usize) -> Result<Graph, DatasetError> {
        if self.x.len() != self.n {
            return Err(DatasetError::RowCount {
                line,
                n: self.n,
                rows: self.x.len(),
            });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for &[u, v] in &self.edges {
            if u > v {
                return Err(DatasetError::NonCanonicalEdge { line, u, v });
            }
            edges.push((u, v));
        }
        let x = Matrix::from_rows(&self.x).map_err(|e| DatasetError::Parse {
            line,
            msg: e.to_string(),
        })?;
        Graph::from_edges(self.id.clone(), &edges, x, self.y)
            .map_err(|source| DatasetError::Graph { line, source })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    graphs: Vec<Graph>,
    splits: Vec<Option<Split>>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>, splits: Vec<Option<Split>>) -> Result<Self, DatasetError> {
        let first = graphs.first().ok_or(DatasetError::Empty)?;
        if splits.len() != graphs.len() {
            return Err(DatasetError::SplitCount(graphs.len(), splits.len()));
        }
        let feature_dim = first.feature_dim();
        let mut ids = HashSet::new();
        for g in &graphs {
            if g.feature_dim() != feature_dim {
                return Err(DatasetError::FeatureDim {
                    id: g.id().to_string(),
                    expected: feature_dim,
                    got: g.feature_dim(),
                });
            }
            if !ids.insert(g.id()) {
                return Err(DatasetError::DuplicateId(g.id().to_string()));
            }
        }
        Ok(Self {
            graphs,
            splits,
            feature_dim,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn split_of(&self, index: usize) -> Option<Split> {
        self.splits[index]
    }

    pub fn split(&self, split: Split) -> Vec<&Graph> {
        self.graphs
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == Some(split))
            .map(|(g, _)| g)
            .collect()
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for (g, s) in ds.graphs.iter().zip(&ds.splits) {
        let line = serde_json::to_string(&GraphRecord::from_graph(g, *s))
            .expect("graph records always serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut graphs = Vec::new();
    let mut splits = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        graphs.push(record.to_graph(i + 1)?);
        splits.push(record.split);
    }
    Dataset::new(graphs, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic_dataset, ClassRule};

    fn write(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let p = dir.path().join("ds.jsonl");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_dataset(3, 12, ClassRule::CommunityPair, 4);
        let p = dir.path().join("rt.jsonl");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn rejects_asymmetric_edge_listing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, r#"{"id":"a","n":2,"edges":[[1,0]],"x":[[1.0],[2.0]]}"#);
        let err = load_dataset(&p).unwrap_err();
        assert!(matches!(err, DatasetError::NonCanonicalEdge { line: 1, u: 1, v: 0 }), "{err}");
        assert!(err.to_string().contains("symmetric"));
    }

    #[test]
    fn rejects_feature_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "{\"id\":\"a\",\"n\":1,\"x\":[[1.0]]}\n{\"id\":\"b\",\"n\":1,\"x\":[[1.0,2.0]]}\n",
        );
        assert!(matches!(load_dataset(&p), Err(DatasetError::FeatureDim { .. })));
    }

    #[test]
    fn rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "{\"id\":\"a\",\"n\":2,\"x\":[[1.0]]}\n");
        assert!(matches!(load_dataset(&p), Err(DatasetError::RowCount { .. })));
        let p = write(&dir, "{\"id\":\"a\",\"n\":1,\"x\":[[1.0]],\"extra\":3}\n");
        assert!(matches!(load_dataset(&p), Err(DatasetError::Parse { line: 1, .. })));
        let p = write(&dir, "{\"id\":\"a\",\"n\":1,\"x\":[[1.0]]}\n{\"id\":\"a\",\"n\":1,\"x\":[[2.0]]}\n");
        assert!(matches!(load_dataset(&p), Err(DatasetError::DuplicateId(_))));
        let p = write(&dir, "{\"id\":\"a\",\"n\":2,\"edges\":[[0,0]],\"x\":[[1.0],[1.0]]}\n");
        assert!(matches!(load_dataset(&p), Err(DatasetError::Graph { .. })));
    }
}
