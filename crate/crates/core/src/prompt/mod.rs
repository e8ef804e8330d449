//! Graph prompt features: one learnable vector `p` added to every node's
//! features, `X* = X + 1 p`, in front of a frozen model.
//!
//! For a single-layer linear GIN with sum readout, any graph-level
//! transformation can be matched exactly by some `p`; [`solve_prompt`]
//! computes it in closed form and [`verify_equivalence`] checks it with two
//! direct forward passes. [`fit_prompt`] searches for `p` by gradient
//! descent when no closed form applies.

mod fit;
mod solver;
mod verify;

pub use fit::{fit_prompt, FitConfig, FitResult};
pub use solver::{solve_prompt, solve_step, solve_steps, solver_denominator};
pub use verify::{verify_equivalence, EquivalenceReport};

use crate::gnn::GnnError;
use crate::graph::{Graph, GraphError};
use crate::tensor::{Matrix, Tape, TensorError, Var};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const PROMPT_FILE_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt has dimension {got}, graph features have {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("model is not solver-grade: {0}")]
    NotSolverGrade(String),
    #[error("mean readout with a transformation that changes the node count ({from} -> {to}); only sum readout has a closed form here, use fit_prompt")]
    MeanReadoutNodeCountChange { from: usize, to: usize },
    #[error("degenerate denominator D + N + N*eps = {0}")]
    ZeroDenominator(f64),
    #[error("non-finite objective at step {step}; learning rate too large?")]
    NonFinite { step: usize },
    #[error("invalid prompt file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The prompt `p = [a_1, ..., a_F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptVector {
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptFile {
    version: u64,
    dim: usize,
    p: Vec<f64>,
}

impl PromptVector {
    pub fn new(values: Vec<f64>) -> Result<Self, PromptError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PromptError::Format("prompt entries must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn as_row(&self) -> Matrix {
        Matrix::row_vector(self.values.clone())
    }

    /// Coordinate-wise sum. Panics on dimension mismatch.
    pub fn add(&self, other: &PromptVector) -> PromptVector {
        assert_eq!(self.dim(), other.dim(), "prompt dimensions differ");
        PromptVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PromptFile {
            version: PROMPT_FILE_VERSION,
            dim: self.dim(),
            p: self.values.clone(),
        })
        .expect("prompt serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PromptError> {
        let f: PromptFile = serde_json::from_str(s).map_err(|e| PromptError::Format(e.to_string()))?;
        if f.version != PROMPT_FILE_VERSION {
            return Err(PromptError::Format(format!("unsupported version {}", f.version)));
        }
        if f.dim != f.p.len() {
            return Err(PromptError::Format(format!(
                "dim {} but {} values",
                f.dim,
                f.p.len()
            )));
        }
        Self::new(f.p)
    }

    pub fn save(&self, path: &Path) -> Result<(), PromptError> {
        std::fs::write(path, self.to_json()).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let s = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s)
    }
}

fn check_dim(g: &Graph, p: &PromptVector) -> Result<(), PromptError> {
    if p.dim() != g.feature_dim() {
        return Err(PromptError::Dimension {
            expected: g.feature_dim(),
            got: p.dim(),
        });
    }
    Ok(())
}

/// The prompted graph: same adjacency, every feature row shifted by `p`.
pub fn apply_prompt(g: &Graph, p: &PromptVector) -> Result<Graph, PromptError> {
    check_dim(g, p)?;
    let x = g.features().broadcast_add_row(p.values())?;
    Ok(g.with_features(x)?)
}

/// Records `X + 1 p` on a tape; gradients flow into `prompt`.
pub fn prompted_features(tape: &mut Tape, features: &Matrix, prompt: Var) -> Result<Var, PromptError> {
    let x = tape.constant(features.clone());
    Ok(tape.broadcast_add_row(x, prompt)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::{arb_graph, k2};
    use crate::gnn::{Activation, LayerKind, ModelConfig, Readout, UpdateKind};
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    #[test]
    fn zero_prompt_is_identity() {
        let g = k2();
        assert_eq!(apply_prompt(&g, &PromptVector::zeros(1)).unwrap(), g);
    }

    #[test]
    fn shifts_every_row() {
        let out = apply_prompt(&k2(), &PromptVector::new(vec![0.5]).unwrap()).unwrap();
        assert_eq!(out.features().as_slice(), &[1.5, 2.5]);
        assert_eq!(out.adjacency(), k2().adjacency());
    }

    #[test]
    fn dimension_checked() {
        assert!(matches!(
            apply_prompt(&k2(), &PromptVector::zeros(2)),
            Err(PromptError::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let p = PromptVector::new(vec![0.1, -2.5e-17, 3.0]).unwrap();
        let back = PromptVector::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
        assert!(PromptVector::from_json(r#"{"version":1,"dim":2,"p":[1.0]}"#).is_err());
        assert!(PromptVector::from_json(r#"{"version":2,"dim":1,"p":[1.0]}"#).is_err());
    }

    /// d loss / d p equals the column sums of d loss / d X*.
    #[test]
    fn prompt_gradient_is_column_sum() {
        let cfg = ModelConfig {
            kind: LayerKind::Gin,
            num_layers: 2,
            hidden_dim: 4,
            update: UpdateKind::Mlp,
            bias: true,
            epsilon: 0.1,
            readout: Readout::Sum,
            activation: Activation::Relu,
            head_layers: 1,
        };
        let model = cfg.build(3, 4).unwrap();
        let g = crate::graph::Graph::from_edges(
            "g",
            &[(0, 1), (1, 2), (2, 3)],
            Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin()),
            Some(1),
        )
        .unwrap();
        let p0 = Matrix::row_vector(vec![0.2, -0.1, 0.05]);

        let mut tape = Tape::new();
        let bound = model.bind_with(&mut tape, |_| false);
        let p = tape.param(p0.clone());
        let xs = prompted_features(&mut tape, g.features(), p).unwrap();
        let (_, logit) = model.forward_on_tape(&mut tape, &bound, g.adjacency(), xs).unwrap();
        let loss = tape.bce_loss(logit, &[1.0]).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p), tape.grad(xs).row_sum());

        let report = grad_check(
            |t, v| {
                let bound = model.bind_with(t, |_| false);
                let x = t.constant(g.features().clone());
                let xs = t.broadcast_add_row(x, v[0])?;
                let (_, logit) = model
                    .forward_on_tape(t, &bound, g.adjacency(), xs)
                    .map_err(|e| match e {
                        GnnError::Tensor(t) => t,
                        e => panic!("{e}"),
                    })?;
                t.bce_loss(logit, &[1.0])
            },
            &[p0],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    proptest! {
        #[test]
        fn prompts_are_additive(g in arb_graph(8, 3), a in proptest::collection::vec(-2.0..2.0f64, 3), b in proptest::collection::vec(-2.0..2.0f64, 3)) {
            let pa = PromptVector::new(a).unwrap();
            let pb = PromptVector::new(b).unwrap();
            let twice = apply_prompt(&apply_prompt(&g, &pa).unwrap(), &pb).unwrap();
            let once = apply_prompt(&g, &pa.add(&pb)).unwrap();
            for (x, y) in twice.features().as_slice().iter().zip(once.features().as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
