use super::{Activation, GinUpdate, GnnError, GnnModel, Head, Layer, Linear, Readout};
use crate::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gin,
    Gcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateKind {
    Linear,
    Mlp,
}

fn default_head_layers() -> usize {
    1
}

/// Declarative model shape; the input width comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// GIN update; ignored for GCN.
    pub update: UpdateKind,
    /// Biases in GIN updates. GCN layers never carry a bias.
    pub bias: bool,
    #[serde(default)]
    pub epsilon: f64,
    pub readout: Readout,
    pub activation: Activation,
    #[serde(default = "default_head_layers")]
    pub head_layers: usize,
}

impl ModelConfig {
    /// Builds a model with Glorot-uniform weights and zero biases.
    pub fn build(&self, input_dim: usize, seed: u64) -> Result<GnnModel, GnnError> {
        if self.num_layers == 0 || self.hidden_dim == 0 || input_dim == 0 {
            return Err(GnnError::Invalid(
                "num_layers, hidden_dim and input width must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(self.num_layers);
        let mut width = input_dim;
        for _ in 0..self.num_layers {
            let layer = match self.kind {
                LayerKind::Gcn => Layer::Gcn {
                    weight: glorot(&mut rng, width, self.hidden_dim),
                },
                LayerKind::Gin => {
                    let update = match self.update {
                        UpdateKind::Linear => {
                            GinUpdate::Linear(linear(&mut rng, width, self.hidden_dim, self.bias))
                        }
                        UpdateKind::Mlp => GinUpdate::Mlp(
                            linear(&mut rng, width, self.hidden_dim, self.bias),
                            linear(&mut rng, self.hidden_dim, self.hidden_dim, self.bias),
                        ),
                    };
                    Layer::Gin {
                        epsilon: Matrix::scalar(self.epsilon),
                        update,
                    }
                }
            };
            layers.push(layer);
            width = self.hidden_dim;
        }
        let head = init_head(&mut rng, self.hidden_dim, self.head_layers)?;
        GnnModel::new(layers, self.readout, self.activation, head)
    }

    /// Checks that `model` has the shape this config describes.
    pub fn check_matches(&self, model: &GnnModel) -> Result<(), GnnError> {
        if model.layers().len() != self.num_layers {
            return Err(GnnError::Checkpoint(format!(
                "{} layers in checkpoint, {} in config",
                model.layers().len(),
                self.num_layers
            )));
        }
        for (i, l) in model.layers().iter().enumerate() {
            let kind_ok = matches!(
                (l, self.kind),
                (Layer::Gin { .. }, LayerKind::Gin) | (Layer::Gcn { .. }, LayerKind::Gcn)
            );
            if !kind_ok || l.out_dim() != self.hidden_dim {
                return Err(GnnError::Checkpoint(format!(
                    "layer {i} is {}->{} {:?}, config expects {:?} with width {}",
                    l.in_dim(),
                    l.out_dim(),
                    l.epsilon().map_or("GCN", |_| "GIN"),
                    self.kind,
                    self.hidden_dim
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

fn linear(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
    Linear {
        weight: glorot(rng, fan_in, fan_out),
        bias: bias.then(|| Matrix::zeros(1, fan_out)),
    }
}

/// `depth` linear layers `in -> in -> ... -> 1`, biased, relu between.
pub(crate) fn init_head(rng: &mut ChaCha8Rng, in_dim: usize, depth: usize) -> Result<Head, GnnError> {
    if depth == 0 {
        return Err(GnnError::Invalid("head needs at least one layer".into()));
    }
    let layers = (0..depth)
        .map(|k| {
            let out = if k + 1 == depth { 1 } else { in_dim };
            linear(rng, in_dim, out, true)
        })
        .collect();
    Ok(Head { layers })
}

impl Head {
    /// Fresh seeded head of the given depth.
    pub fn init(in_dim: usize, depth: usize, seed: u64) -> Result<Head, GnnError> {
        init_head(&mut ChaCha8Rng::seed_from_u64(seed), in_dim, depth)
    }
}
