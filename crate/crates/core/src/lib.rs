//! Graph prompt feature (GPF) tuning for frozen GNN backbones.
//!
//! A GPF is a single learnable vector added to the features of every node
//! before a frozen pre-trained model runs. The crate provides:
//!
//! - [`graph`]: graphs, graph-level transformations, datasets.
//! - [`tensor`]: dense matrices with reverse-mode gradients.
//! - [`gnn`]: GIN/GCN layers, readouts, heads, checkpoints.
//! - [`prompt`]: prompt application, closed-form prompt solvers for
//!   single-layer linear GIN models, equivalence checks, and a gradient
//!   fitter for everything else.
//! - [`harness`]: tuning strategies, training, ROC-AUC, comparisons.
//! - [`cli`]: the `gpf` command line.

pub mod graph;
pub mod tensor;
pub mod gnn;
pub mod prompt;
pub mod harness;
pub mod cli;
