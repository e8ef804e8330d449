//! GIN and GCN backbones with sum/mean readout and a small classification
//! head.
//!
//! Parameters are organised in groups, one per backbone layer (`layer.{i}`,
//! which includes that layer's `eps`) plus `head`. Freezing works on whole
//! groups. Every parameter has a stable name and a fixed position in the
//! canonical order returned by [`GnnModel::params`]; tape bindings and
//! checkpoints rely on that order.

mod checkpoint;
mod config;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{LayerKind, ModelConfig, UpdateKind};
pub use forward::{layer_forward, model_forward, normalized_adjacency, readout, Bound, ModelOutput};

use crate::tensor::{Matrix, TensorError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GnnError {
    #[error("{what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown parameter group {0:?}")]
    UnknownGroup(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("checkpoint version {0} is not supported (expected {CHECKPOINT_VERSION})")]
    Version(u64),
    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// `x W + b`, with `W` stored as `in x out` and `b` as `1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Option<Matrix>) -> Result<Self, GnnError> {
        if let Some(b) = &bias {
            if b.shape() != (1, weight.cols()) {
                return Err(GnnError::Dimension {
                    what: "bias width".into(),
                    expected: weight.cols(),
                    got: b.cols(),
                });
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Matrix::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GinUpdate {
    Linear(Linear),
    /// Two linear maps with a relu in between.
    Mlp(Linear, Linear),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `h((A + (1 + eps) I) H)`; `epsilon` is a 1x1 matrix so it can be
    /// trained and checkpointed like any other parameter.
    Gin { epsilon: Matrix, update: GinUpdate },
    /// `D^-1/2 (A + I) D^-1/2 H W`
    Gcn { weight: Matrix },
}

impl Layer {
    pub fn gin_linear(epsilon: f64, theta: Matrix) -> Self {
        Layer::Gin {
            epsilon: Matrix::scalar(epsilon),
            update: GinUpdate::Linear(Linear {
                weight: theta,
                bias: None,
            }),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Gin { update, .. } => match update {
                GinUpdate::Linear(l) | GinUpdate::Mlp(l, _) => l.in_dim(),
            },
            Layer::Gcn { weight } => weight.rows(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Gin { update, .. } => match update {
                GinUpdate::Linear(l) | GinUpdate::Mlp(_, l) => l.out_dim(),
            },
            Layer::Gcn { weight } => weight.cols(),
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Layer::Gin { epsilon, .. } => Some(epsilon[(0, 0)]),
            Layer::Gcn { .. } => None,
        }
    }

    /// GIN with a single bias-free linear update.
    pub fn is_linear_gin(&self) -> bool {
        matches!(
            self,
            Layer::Gin {
                update: GinUpdate::Linear(Linear { bias: None, .. }),
                ..
            }
        )
    }

    fn check(&self) -> Result<(), GnnError> {
        match self {
            Layer::Gin { epsilon, update } => {
                if epsilon.shape() != (1, 1) {
                    return Err(GnnError::Invalid("epsilon must be 1x1".into()));
                }
                if let GinUpdate::Mlp(a, b) = update {
                    if a.out_dim() != b.in_dim() {
                        return Err(GnnError::Dimension {
                            what: "GIN MLP hidden width".into(),
                            expected: a.out_dim(),
                            got: b.in_dim(),
                        });
                    }
                }
                Ok(())
            }
            Layer::Gcn { .. } => Ok(()),
        }
    }
}

/// Classification head: one or more linear maps with relu between them,
/// ending in a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub layers: Vec<Linear>,
}

impl Head {
    pub fn linear(l: Linear) -> Self {
        Head { layers: vec![l] }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }
}

/// A parameter as seen by binding, freezing, and checkpointing code.
#[derive(Debug, Clone)]
pub struct ParamRef<'a> {
    pub group: GroupId,
    pub slot: String,
    pub value: &'a Matrix,
}

impl ParamRef<'_> {
    pub fn name(&self) -> String {
        format!("{}.{}", self.group, self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupId {
    Layer(usize),
    Head,
}

impl std::fmt::Display for GroupId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupId::Layer(i) => write!(f, "layer.{i}"),
            GroupId::Head => f.write_str("head"),
        }
    }
}

impl std::str::FromStr for GroupId {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self, GnnError> {
        if s == "head" {
            return Ok(GroupId::Head);
        }
        s.strip_prefix("layer.")
            .and_then(|i| i.parse().ok())
            .map(GroupId::Layer)
            .ok_or_else(|| GnnError::UnknownGroup(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    layers: Vec<Layer>,
    readout: Readout,
    activation: Activation,
    head: Head,
    frozen: BTreeSet<GroupId>,
}

impl GnnModel {
    pub fn new(
        layers: Vec<Layer>,
        readout: Readout,
        activation: Activation,
        head: Head,
    ) -> Result<Self, GnnError> {
        if layers.is_empty() {
            return Err(GnnError::Invalid("at least one layer is required".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(GnnError::Dimension {
                    what: format!("input width of layer {}", i + 1),
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        let model = Self {
            layers,
            readout,
            activation,
            head: Head { layers: Vec::new() },
            frozen: BTreeSet::new(),
        };
        model.with_head(head)
    }

    /// The single-layer linear GIN with sum readout and no activation for
    /// which prompts can be solved in closed form. The head is a fixed
    /// averaging map; it does not affect graph embeddings.
    pub fn solver_grade(theta: Matrix, epsilon: f64) -> Result<Self, GnnError> {
        let out = theta.cols();
        let head = Head::linear(Linear::new(
            Matrix::filled(out, 1, 1.0 / out as f64),
            Some(Matrix::zeros(1, 1)),
        )?);
        Self::new(
            vec![Layer::gin_linear(epsilon, theta)],
            Readout::Sum,
            Activation::None,
            head,
        )
    }

    /// Replaces the head, keeping backbone and frozen flags.
    pub fn with_head(mut self, head: Head) -> Result<Self, GnnError> {
        if head.layers.is_empty() {
            return Err(GnnError::Invalid("head needs at least one layer".into()));
        }
        if head.in_dim() != self.embedding_dim() {
            return Err(GnnError::Dimension {
                what: "head input width".into(),
                expected: self.embedding_dim(),
                got: head.in_dim(),
            });
        }
        for (i, w) in head.layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(GnnError::Dimension {
                    what: format!("head layer {} input width", i + 1),
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        let last = head.layers.last().expect("non-empty");
        if last.out_dim() != 1 {
            return Err(GnnError::Dimension {
                what: "head output width".into(),
                expected: 1,
                got: last.out_dim(),
            });
        }
        self.head = head;
        Ok(self)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn groups(&self) -> Vec<GroupId> {
        (0..self.layers.len())
            .map(GroupId::Layer)
            .chain(std::iter::once(GroupId::Head))
            .collect()
    }

    pub fn backbone_groups(&self) -> Vec<GroupId> {
        (0..self.layers.len()).map(GroupId::Layer).collect()
    }

    fn check_group(&self, g: GroupId) -> Result<(), GnnError> {
        match g {
            GroupId::Layer(i) if i >= self.layers.len() => {
                Err(GnnError::UnknownGroup(g.to_string()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_frozen(&self, g: GroupId) -> bool {
        self.frozen.contains(&g)
    }

    pub fn frozen_groups(&self) -> impl Iterator<Item = GroupId> + '_ {
        self.frozen.iter().copied()
    }

    /// Idempotent. Fails without changing anything if a group is unknown.
    pub fn freeze(&mut self, groups: &[GroupId]) -> Result<(), GnnError> {
        for &g in groups {
            self.check_group(g)?;
        }
        self.frozen.extend(groups.iter().copied());
        Ok(())
    }

    pub fn unfreeze(&mut self, groups: &[GroupId]) -> Result<(), GnnError> {
        for &g in groups {
            self.check_group(g)?;
        }
        for g in groups {
            self.frozen.remove(g);
        }
        Ok(())
    }

    /// Freezes exactly `groups` and unfreezes everything else.
    pub fn set_frozen(&mut self, groups: &[GroupId]) -> Result<(), GnnError> {
        for &g in groups {
            self.check_group(g)?;
        }
        self.frozen = groups.iter().copied().collect();
        Ok(())
    }

    /// All parameters in canonical order.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let group = GroupId::Layer(i);
            match layer {
                Layer::Gin { epsilon, update } => {
                    out.push(ParamRef { group, slot: "epsilon".into(), value: epsilon });
                    match update {
                        GinUpdate::Linear(l) => push_linear(&mut out, group, l, ""),
                        GinUpdate::Mlp(a, b) => {
                            push_linear(&mut out, group, a, "mlp.0.");
                            push_linear(&mut out, group, b, "mlp.1.");
                        }
                    }
                }
                Layer::Gcn { weight } => out.push(ParamRef { group, slot: "weight".into(), value: weight }),
            }
        }
        for (k, l) in self.head.layers.iter().enumerate() {
            push_linear(&mut out, GroupId::Head, l, &format!("{k}."));
        }
        out
    }

    /// Mutable parameters, same order as [`GnnModel::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Gin { epsilon, update } => {
                    out.push(epsilon);
                    match update {
                        GinUpdate::Linear(l) => push_linear_mut(&mut out, l),
                        GinUpdate::Mlp(a, b) => {
                            push_linear_mut(&mut out, a);
                            push_linear_mut(&mut out, b);
                        }
                    }
                }
                Layer::Gcn { weight } => out.push(weight),
            }
        }
        for l in &mut self.head.layers {
            push_linear_mut(&mut out, l);
        }
        out
    }

    /// Exact scalar parameter count, optionally restricted to unfrozen groups.
    pub fn count_params(&self, trainable_only: bool) -> usize {
        self.params()
            .iter()
            .filter(|p| !trainable_only || !self.is_frozen(p.group))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn group_param_count(&self, g: GroupId) -> usize {
        self.params()
            .iter()
            .filter(|p| p.group == g)
            .map(|p| p.value.len())
            .sum()
    }

    /// Single-layer GIN, bias-free linear update, no activation.
    /// Readout is checked separately by the solvers.
    pub fn linear_gin_violation(&self) -> Option<String> {
        if self.layers.len() != 1 {
            return Some(format!("model has {} layers, expected exactly 1", self.layers.len()));
        }
        match &self.layers[0] {
            Layer::Gcn { .. } => Some("layer is GCN, expected GIN".into()),
            Layer::Gin { update: GinUpdate::Mlp(..), .. } => {
                Some("GIN update is an MLP, expected a single linear map".into())
            }
            Layer::Gin { update: GinUpdate::Linear(l), .. } if l.bias.is_some() => {
                Some("GIN linear update has a bias".into())
            }
            _ if self.activation != Activation::None => {
                Some("activation must be none for the closed-form solver".into())
            }
            _ => None,
        }
    }
}

fn push_linear<'a>(out: &mut Vec<ParamRef<'a>>, group: GroupId, l: &'a Linear, prefix: &str) {
    out.push(ParamRef { group, slot: format!("{prefix}weight"), value: &l.weight });
    if let Some(b) = &l.bias {
        out.push(ParamRef { group, slot: format!("{prefix}bias"), value: b });
    }
}

fn push_linear_mut<'a>(out: &mut Vec<&'a mut Matrix>, l: &'a mut Linear) {
    out.push(&mut l.weight);
    if let Some(b) = &mut l.bias {
        out.push(b);
    }
}
