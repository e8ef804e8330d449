//! Versioned JSON checkpoints.
//!
//! The header describes the architecture; `params` maps each parameter name
//! to its values as base64 of little-endian `f64`s, so round trips are
//! bitwise exact. `frozen` records every group's flag.

use super::{
    Activation, GinUpdate, GnnError, GnnModel, GroupId, Head, Layer, LayerKind, Linear, Readout,
    UpdateKind,
};
use crate::tensor::Matrix;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerHeader {
    kind: LayerKind,
    dims: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    update: Option<UpdateKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[serde(default)]
    bias: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadHeader {
    /// `[in, hidden..., 1]`
    dims: Vec<usize>,
    bias: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u64,
    layers: Vec<LayerHeader>,
    readout: Readout,
    activation: Activation,
    head: HeadHeader,
    params: BTreeMap<String, String>,
    frozen: BTreeMap<String, bool>,
}

fn encode(m: &Matrix) -> String {
    let bytes: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, s: &str) -> Result<Vec<f64>, GnnError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| GnnError::Checkpoint(format!("{name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(GnnError::Checkpoint(format!(
            "{name}: {} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn header_of(model: &GnnModel) -> (Vec<LayerHeader>, HeadHeader) {
    let layers = model
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Gin { epsilon, update } => {
                let (kind, hidden, bias) = match update {
                    GinUpdate::Linear(lin) => (UpdateKind::Linear, None, lin.bias.is_some()),
                    GinUpdate::Mlp(a, _) => (UpdateKind::Mlp, Some(a.out_dim()), a.bias.is_some()),
                };
                LayerHeader {
                    kind: LayerKind::Gin,
                    dims: [l.in_dim(), l.out_dim()],
                    epsilon: Some(epsilon[(0, 0)]),
                    update: Some(kind),
                    hidden,
                    bias,
                }
            }
            Layer::Gcn { .. } => LayerHeader {
                kind: LayerKind::Gcn,
                dims: [l.in_dim(), l.out_dim()],
                epsilon: None,
                update: None,
                hidden: None,
                bias: false,
            },
        })
        .collect();
    let head = model.head();
    let mut dims = vec![head.in_dim()];
    dims.extend(head.layers.iter().map(Linear::out_dim));
    let bias = head.layers.iter().map(|l| l.bias.is_some()).collect();
    (layers, HeadHeader { dims, bias })
}

/// Zero-valued model with the header's architecture.
fn skeleton(file: &CheckpointFile) -> Result<GnnModel, GnnError> {
    let zeros_linear = |i: usize, o: usize, bias: bool| Linear {
        weight: Matrix::zeros(i, o),
        bias: bias.then(|| Matrix::zeros(1, o)),
    };
    let mut layers = Vec::with_capacity(file.layers.len());
    for h in &file.layers {
        let [i, o] = h.dims;
        layers.push(match h.kind {
            LayerKind::Gcn => Layer::Gcn {
                weight: Matrix::zeros(i, o),
            },
            LayerKind::Gin => {
                let update = match h.update.unwrap_or(UpdateKind::Linear) {
                    UpdateKind::Linear => GinUpdate::Linear(zeros_linear(i, o, h.bias)),
                    UpdateKind::Mlp => {
                        let hid = h.hidden.ok_or_else(|| {
                            GnnError::Checkpoint("mlp layer without hidden width".into())
                        })?;
                        GinUpdate::Mlp(zeros_linear(i, hid, h.bias), zeros_linear(hid, o, h.bias))
                    }
                };
                Layer::Gin {
                    epsilon: Matrix::zeros(1, 1),
                    update,
                }
            }
        });
    }
    let hd = &file.head;
    if hd.dims.len() < 2 || hd.bias.len() != hd.dims.len() - 1 {
        return Err(GnnError::Checkpoint("malformed head header".into()));
    }
    let head = Head {
        layers: hd
            .dims
            .windows(2)
            .zip(&hd.bias)
            .map(|(w, &b)| zeros_linear(w[0], w[1], b))
            .collect(),
    };
    GnnModel::new(layers, file.readout, file.activation, head)
        .map_err(|e| GnnError::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(model: &GnnModel, path: &Path) -> Result<(), GnnError> {
    let (layers, head) = header_of(model);
    let params = model
        .params()
        .iter()
        .map(|p| (p.name(), encode(p.value)))
        .collect();
    let frozen = model
        .groups()
        .into_iter()
        .map(|g| (g.to_string(), model.is_frozen(g)))
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        layers,
        readout: model.readout(),
        activation: model.activation(),
        head,
        params,
        frozen,
    };
    let body = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    std::fs::write(path, body).map_err(|source| GnnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<GnnModel, GnnError> {
    let body = std::fs::read_to_string(path).map_err(|source| GnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_checkpoint(&body)
}

pub(crate) fn parse_checkpoint(body: &str) -> Result<GnnModel, GnnError> {
    let raw: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(CHECKPOINT_VERSION) => {}
        Some(v) => return Err(GnnError::Version(v)),
        None => return Err(GnnError::Checkpoint("missing version header".into())),
    }
    let file: CheckpointFile =
        serde_json::from_value(raw).map_err(|e| GnnError::Checkpoint(e.to_string()))?;
    let mut model = skeleton(&file)?;

    let names: Vec<String> = model.params().iter().map(|p| p.name()).collect();
    if names.len() != file.params.len() {
        return Err(GnnError::Checkpoint(format!(
            "header implies {} parameter arrays, file has {}",
            names.len(),
            file.params.len()
        )));
    }
    for (name, slot) in names.iter().zip(model.params_mut()) {
        let encoded = file
            .params
            .get(name)
            .ok_or_else(|| GnnError::Checkpoint(format!("missing parameter {name}")))?;
        let values = decode(name, encoded)?;
        if values.len() != slot.len() {
            return Err(GnnError::Checkpoint(format!(
                "{name}: {} values for shape {:?}",
                values.len(),
                slot.shape()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GnnError::Checkpoint(format!("{name}: non-finite value")));
        }
        slot.as_mut_slice().copy_from_slice(&values);
    }

    let mut frozen = Vec::new();
    for (name, &flag) in &file.frozen {
        let g: GroupId = name.parse()?;
        if flag {
            frozen.push(g);
        }
    }
    model
        .set_frozen(&frozen)
        .map_err(|e| GnnError::Checkpoint(e.to_string()))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{model_forward, ModelConfig};
    use crate::graph::Graph;

    fn model() -> GnnModel {
        let cfg = ModelConfig {
            kind: LayerKind::Gin,
            num_layers: 2,
            hidden_dim: 4,
            update: UpdateKind::Mlp,
            bias: true,
            epsilon: 0.25,
            readout: Readout::Mean,
            activation: Activation::Relu,
            head_layers: 2,
        };
        let mut m = cfg.build(3, 9).unwrap();
        m.freeze(&[GroupId::Layer(0)]).unwrap();
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.params().iter().zip(back.params()) {
            let bits = |x: &Matrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.value), bits(b.value));
        }
        let g = Graph::from_edges("p", &[(0, 1), (1, 2)], Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64 * 0.3), None).unwrap();
        assert_eq!(model_forward(&m, &g).unwrap(), model_forward(&back, &g).unwrap());
    }

    #[test]
    fn gcn_and_solver_grade_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = GnnModel::solver_grade(Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.1]]).unwrap(), 0.3).unwrap();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_version() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 7", 1);
        assert!(matches!(parse_checkpoint(&body), Err(GnnError::Version(7))));
    }

    #[test]
    fn rejects_dims_disagreeing_with_arrays() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&body).unwrap();
        v["layers"][0]["hidden"] = serde_json::json!(5);
        let err = parse_checkpoint(&v.to_string()).unwrap_err();
        assert!(matches!(err, GnnError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn config_mismatch_is_typed() {
        let m = model();
        let mut cfg = ModelConfig {
            kind: LayerKind::Gin,
            num_layers: 2,
            hidden_dim: 4,
            update: UpdateKind::Mlp,
            bias: true,
            epsilon: 0.0,
            readout: Readout::Mean,
            activation: Activation::Relu,
            head_layers: 1,
        };
        cfg.check_matches(&m).unwrap();
        cfg.hidden_dim = 8;
        assert!(matches!(cfg.check_matches(&m), Err(GnnError::Checkpoint(_))));
    }
}
