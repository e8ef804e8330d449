//! On-disk formats owned by the command line: transformation specs, single
//! graphs, and run configs.

use super::CliError;
use crate::gnn::ModelConfig;
use crate::graph::{ComponentEdit, Graph, GraphRecord, TransformSpec};
use crate::harness::TrainConfig;
use crate::tensor::Matrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Wire form of [`TransformSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecFile {
    Feature { delta: Vec<Vec<f64>> },
    Link { delta: Vec<Vec<f64>> },
    IsolatedComponent { edits: Vec<EditFile> },
    Composite { steps: Vec<SpecFile> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditFile {
    Add { graph: GraphRecord },
    Remove { nodes: Vec<usize> },
}

impl SpecFile {
    pub fn to_spec(&self) -> Result<TransformSpec, CliError> {
        let matrix = |rows: &Vec<Vec<f64>>| {
            Matrix::from_rows(rows).map_err(|e| CliError::Validation(format!("spec matrix: {e}")))
        };
        Ok(match self {
            SpecFile::Feature { delta } => TransformSpec::Feature { delta: matrix(delta)? },
            SpecFile::Link { delta } => TransformSpec::Link { delta: matrix(delta)? },
            SpecFile::IsolatedComponent { edits } => TransformSpec::IsolatedComponents {
                edits: edits
                    .iter()
                    .map(|e| match e {
                        EditFile::Add { graph } => Ok(ComponentEdit::Add(graph.to_graph(1)?)),
                        EditFile::Remove { nodes } => Ok(ComponentEdit::Remove(nodes.clone())),
                    })
                    .collect::<Result<_, CliError>>()?,
            },
            SpecFile::Composite { steps } => TransformSpec::Composite {
                steps: steps.iter().map(SpecFile::to_spec).collect::<Result<_, _>>()?,
            },
        })
    }

    pub fn from_spec(spec: &TransformSpec) -> Self {
        match spec {
            TransformSpec::Feature { delta } => SpecFile::Feature { delta: delta.to_rows() },
            TransformSpec::Link { delta } => SpecFile::Link { delta: delta.to_rows() },
            TransformSpec::IsolatedComponents { edits } => SpecFile::IsolatedComponent {
                edits: edits
                    .iter()
                    .map(|e| match e {
                        ComponentEdit::Add(g) => EditFile::Add {
                            graph: GraphRecord::from_graph(g, None),
                        },
                        ComponentEdit::Remove(nodes) => EditFile::Remove { nodes: nodes.clone() },
                    })
                    .collect(),
            },
            TransformSpec::Composite { steps } => SpecFile::Composite {
                steps: steps.iter().map(SpecFile::from_spec).collect(),
            },
        }
    }
}

/// Everything a run needs besides file paths. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub strategies: Option<Vec<String>>,
    #[serde(default)]
    pub seeds: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for cfg in [&self.pretrain, &self.train].into_iter().flatten() {
            cfg.validate()?;
        }
        if let Some(m) = &self.model {
            if m.num_layers == 0 || m.hidden_dim == 0 || m.head_layers == 0 {
                return Err(CliError::Validation(
                    "model: num_layers, hidden_dim and head_layers must be positive".into(),
                ));
            }
        }
        if self.seeds == Some(0) {
            return Err(CliError::Validation("seeds must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, body: &str) -> Result<T, CliError> {
    serde_json::from_str(body).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_spec(path: &Path) -> Result<TransformSpec, CliError> {
    parse_json::<SpecFile>(path, &read_text(path)?)?.to_spec()
}

pub fn load_graph(path: &Path) -> Result<Graph, CliError> {
    Ok(parse_json::<GraphRecord>(path, read_text(path)?.trim())?.to_graph(1)?)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = parse_json(path, &read_text(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}
