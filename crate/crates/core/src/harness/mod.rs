//! Tuning strategies, the training loop, ROC-AUC, edge-prediction
//! pre-training, and multi-seed strategy comparisons.

mod compare;
mod curve;
mod metrics;
mod pretrain;
mod train;

pub use compare::{compare_strategies, Comparison, ComparisonRow, SeedRun};
pub use curve::{CurveRecord, MetricCurve};
pub use metrics::{accuracy, evaluate_auc, population_std};
pub use pretrain::{edge_prediction_auc, pretrain_edge_prediction};
pub use train::{train, TrainOutcome};

use crate::gnn::{GnnError, GnnModel, GroupId, Head};
use crate::graph::Split;
use crate::prompt::PromptError;
use crate::tensor::TensorError;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset has no {0:?} graphs")]
    MissingSplit(Split),
    #[error("graph {0:?} has no label")]
    MissingLabel(String),
    #[error("non-finite loss at epoch {epoch}; lower the learning rate")]
    NonFinite { epoch: usize },
    #[error("nothing to train: every parameter group is frozen")]
    EmptyTrainable,
    #[error("AUC needs both classes; got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    Label(u8),
    #[error("no edges to train on")]
    NoEdges,
    #[error("invalid strategy: {0}")]
    Strategy(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Every parameter trainable.
    FullFineTune,
    /// Backbone frozen; prompt and head trainable.
    GraphPromptFeature,
    /// Last `k` backbone layers and the head trainable.
    PartialK(usize),
    /// Backbone frozen; a `k`-layer MLP head trainable.
    MlpHeadK(usize),
    /// Backbone frozen; a linear head trainable.
    LinearProbe,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::FullFineTune => f.write_str("ft"),
            Strategy::GraphPromptFeature => f.write_str("gpf"),
            Strategy::PartialK(k) => write!(f, "partial-{k}"),
            Strategy::MlpHeadK(k) => write!(f, "mlp-{k}"),
            Strategy::LinearProbe => f.write_str("linear-probe"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let k = |rest: &str| -> Result<usize, HarnessError> {
            match rest.parse::<usize>() {
                Ok(k) if k > 0 => Ok(k),
                _ => Err(HarnessError::Strategy(format!("{s:?}: k must be a positive integer"))),
            }
        };
        match s {
            "ft" | "full-fine-tune" => Ok(Strategy::FullFineTune),
            "gpf" => Ok(Strategy::GraphPromptFeature),
            "linear-probe" => Ok(Strategy::LinearProbe),
            _ => {
                if let Some(rest) = s.strip_prefix("partial-") {
                    Ok(Strategy::PartialK(k(rest)?))
                } else if let Some(rest) = s.strip_prefix("mlp-") {
                    Ok(Strategy::MlpHeadK(k(rest)?))
                } else {
                    Err(HarnessError::Strategy(format!(
                        "unknown strategy {s:?}; expected ft, gpf, partial-K, mlp-K or linear-probe"
                    )))
                }
            }
        }
    }
}

impl Strategy {
    pub fn uses_prompt(self) -> bool {
        self == Strategy::GraphPromptFeature
    }

    /// Head depth the strategy trains with.
    pub fn head_depth(self) -> Option<usize> {
        match self {
            Strategy::MlpHeadK(k) => Some(k),
            Strategy::LinearProbe | Strategy::GraphPromptFeature => Some(1),
            Strategy::FullFineTune | Strategy::PartialK(_) => None,
        }
    }

    /// Trainable parameter groups for `model`.
    pub fn trainable_groups(self, model: &GnnModel) -> Result<Vec<GroupId>, HarnessError> {
        let layers = model.layers().len();
        let mut out = match self {
            Strategy::FullFineTune => model.backbone_groups(),
            Strategy::PartialK(k) => {
                if k > layers {
                    return Err(HarnessError::Strategy(format!(
                        "partial-{k} on a {layers}-layer model"
                    )));
                }
                ((layers - k)..layers).map(GroupId::Layer).collect()
            }
            Strategy::GraphPromptFeature | Strategy::MlpHeadK(_) | Strategy::LinearProbe => Vec::new(),
        };
        out.push(GroupId::Head);
        Ok(out)
    }

    /// Freezes every group outside the trainable set. Fails if the head
    /// depth does not match the strategy.
    pub fn apply(self, model: &mut GnnModel) -> Result<(), HarnessError> {
        if let Some(d) = self.head_depth() {
            if model.head().depth() != d {
                return Err(HarnessError::Strategy(format!(
                    "{self} needs a {d}-layer head, model has {}",
                    model.head().depth()
                )));
            }
        }
        let trainable = self.trainable_groups(model)?;
        let frozen: Vec<GroupId> = model.groups().into_iter().filter(|g| !trainable.contains(g)).collect();
        model.set_frozen(&frozen)?;
        Ok(())
    }

    /// Backbone with a fresh seeded head of the strategy's depth (linear
    /// unless stated), frozen as the strategy requires.
    pub fn prepare(self, backbone: &GnnModel, seed: u64) -> Result<GnnModel, HarnessError> {
        let depth = self.head_depth().unwrap_or(1);
        let head = Head::init(backbone.embedding_dim(), depth, seed)?;
        let mut model = backbone.clone().with_head(head)?;
        self.apply(&mut model)?;
        Ok(model)
    }

    /// Trainable parameters of `model` under this strategy, prompt included.
    pub fn trainable_param_count(self, model: &GnnModel) -> Result<usize, HarnessError> {
        let groups = self.trainable_groups(model)?;
        let mut n: usize = groups.iter().map(|&g| model.group_param_count(g)).sum();
        if self.uses_prompt() {
            n += model.input_dim();
        }
        Ok(n)
    }

    /// All parameters the strategy touches or freezes, prompt included.
    pub fn total_param_count(self, model: &GnnModel) -> usize {
        model.count_params(false) + if self.uses_prompt() { model.input_dim() } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean binary cross-entropy on logits.
    Bce,
    /// Mean squared error between the raw head output and the label.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_one")]
    pub eval_every: usize,
    /// Armijo backtracking on each batch, starting from the last accepted
    /// step size doubled.
    #[serde(default)]
    pub backtracking: bool,
}

fn default_loss() -> LossKind {
    LossKind::Bce
}

fn default_metric() -> Metric {
    Metric::Auc
}

fn default_one() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            loss: LossKind::Bce,
            metric: Metric::Auc,
            eval_every: 1,
            backtracking: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(HarnessError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(HarnessError::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Activation, LayerKind, ModelConfig, Readout, UpdateKind};

    pub(crate) fn small_model(layers: usize, input: usize) -> GnnModel {
        ModelConfig {
            kind: LayerKind::Gin,
            num_layers: layers,
            hidden_dim: 6,
            update: UpdateKind::Mlp,
            bias: true,
            epsilon: 0.0,
            readout: Readout::Sum,
            activation: Activation::Relu,
            head_layers: 1,
        }
        .build(input, 3)
        .unwrap()
    }

    #[test]
    fn parse_round_trip() {
        for s in ["ft", "gpf", "partial-2", "mlp-3", "linear-probe"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        assert!("partial-0".parse::<Strategy>().is_err());
        assert!("mlp-x".parse::<Strategy>().is_err());
        assert!("prompt".parse::<Strategy>().is_err());
    }

    #[test]
    fn trainable_sets() {
        let m = small_model(3, 4);
        let all = m.groups();
        assert_eq!(Strategy::FullFineTune.trainable_groups(&m).unwrap(), all);
        assert_eq!(Strategy::PartialK(3).trainable_groups(&m).unwrap(), all);
        assert_eq!(
            Strategy::PartialK(1).trainable_groups(&m).unwrap(),
            vec![GroupId::Layer(2), GroupId::Head]
        );
        assert!(Strategy::PartialK(4).trainable_groups(&m).is_err());
        for s in [Strategy::GraphPromptFeature, Strategy::LinearProbe, Strategy::MlpHeadK(2)] {
            assert_eq!(s.trainable_groups(&m).unwrap(), vec![GroupId::Head]);
        }
    }

    #[test]
    fn gpf_count_is_input_dim_plus_head() {
        let m = Strategy::GraphPromptFeature.prepare(&small_model(2, 4), 1).unwrap();
        assert_eq!(
            Strategy::GraphPromptFeature.trainable_param_count(&m).unwrap(),
            4 + m.group_param_count(GroupId::Head)
        );
        assert_eq!(m.count_params(true), m.group_param_count(GroupId::Head));
    }

    #[test]
    fn prepare_sets_head_depth() {
        let base = small_model(2, 4);
        let m = Strategy::MlpHeadK(3).prepare(&base, 1).unwrap();
        assert_eq!(m.head().depth(), 3);
        assert!(m.backbone_groups().iter().all(|&g| m.is_frozen(g)));
        let mut wrong = m.clone();
        assert!(Strategy::LinearProbe.apply(&mut wrong).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: Result<TrainConfig, _> =
            serde_json::from_str(r#"{"learning_rate":0.1,"epochs":1,"batch_size":2,"extra":1}"#);
        assert!(parsed.is_err());
    }
}
