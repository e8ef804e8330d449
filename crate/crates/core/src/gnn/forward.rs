use super::{Activation, GinUpdate, GnnError, GnnModel, GroupId, Layer, Linear, Readout};
use crate::graph::Graph;
use crate::tensor::{Matrix, Tape, Var};

/// `D^-1/2 (A + I) D^-1/2` with `D_ii = sum_j (A + I)_ij`.
pub fn normalized_adjacency(a: &Matrix) -> Matrix {
    let n = a.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (a.row(i).iter().sum::<f64>() + 1.0).sqrt())
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let a_tilde = a[(i, j)] + if i == j { 1.0 } else { 0.0 };
        inv_sqrt[i] * a_tilde * inv_sqrt[j]
    })
}

/// Model parameters recorded on a tape, in canonical order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    groups: Vec<GroupId>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// `(group, var)` pairs in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (GroupId, Var)> + '_ {
        self.groups.iter().copied().zip(self.vars.iter().copied())
    }
}

struct Cursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }
}

/// Adjacency-derived operators, built once per graph.
struct Propagation {
    adjacency: Option<Var>,
    normalized: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub embedding: Vec<f64>,
    pub logit: f64,
}

impl GnnModel {
    /// Records every parameter; unfrozen groups require gradients.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.bind_with(tape, |g| !self.is_frozen(g))
    }

    pub fn bind_with(&self, tape: &mut Tape, trainable: impl Fn(GroupId) -> bool) -> Bound {
        let params = self.params();
        let vars = params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable(p.group)))
            .collect();
        Bound {
            vars,
            groups: params.iter().map(|p| p.group).collect(),
        }
    }

    /// Final-layer node states, `N x F'`.
    pub fn node_embeddings(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adjacency: &Matrix,
        x: Var,
    ) -> Result<Var, GnnError> {
        let n = adjacency.rows();
        let (rows, cols) = tape.value(x).shape();
        if rows != n {
            return Err(GnnError::Dimension {
                what: "feature rows".into(),
                expected: n,
                got: rows,
            });
        }
        if cols != self.input_dim() {
            return Err(GnnError::Dimension {
                what: "feature width".into(),
                expected: self.input_dim(),
                got: cols,
            });
        }
        let mut prop = Propagation {
            adjacency: None,
            normalized: None,
        };
        let mut cursor = Cursor {
            vars: &bound.vars,
            pos: 0,
        };
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer_on_tape(tape, layer, &mut cursor, &mut prop, adjacency, h)?;
            if i < last && self.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Graph embedding `1 x F'` after readout.
    pub fn graph_embedding(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adjacency: &Matrix,
        x: Var,
    ) -> Result<Var, GnnError> {
        let h = self.node_embeddings(tape, bound, adjacency, x)?;
        Ok(match self.readout {
            Readout::Sum => tape.row_sum(h),
            Readout::Mean => tape.row_mean(h),
        })
    }

    /// Head applied to a `1 x F'` (or `B x F'`) embedding, giving logits.
    pub fn head_logits(&self, tape: &mut Tape, bound: &Bound, embedding: Var) -> Result<Var, GnnError> {
        let start = bound.groups.iter().position(|g| *g == GroupId::Head).expect("head is bound");
        let mut cursor = Cursor {
            vars: &bound.vars,
            pos: start,
        };
        let mut z = embedding;
        let depth = self.head.layers.len();
        for (k, l) in self.head.layers.iter().enumerate() {
            z = linear_on_tape(tape, l, &mut cursor, z)?;
            if k + 1 < depth {
                z = tape.relu(z);
            }
        }
        Ok(z)
    }

    /// Embedding and logit for one graph, node features taken from `x`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        adjacency: &Matrix,
        x: Var,
    ) -> Result<(Var, Var), GnnError> {
        let emb = self.graph_embedding(tape, bound, adjacency, x)?;
        let logit = self.head_logits(tape, bound, emb)?;
        Ok((emb, logit))
    }
}

fn linear_on_tape(tape: &mut Tape, l: &Linear, cursor: &mut Cursor, h: Var) -> Result<Var, GnnError> {
    let w = cursor.next();
    let mut out = tape.matmul(h, w)?;
    if l.bias.is_some() {
        let b = cursor.next();
        out = tape.broadcast_add_row(out, b)?;
    }
    Ok(out)
}

fn layer_on_tape(
    tape: &mut Tape,
    layer: &Layer,
    cursor: &mut Cursor,
    prop: &mut Propagation,
    adjacency: &Matrix,
    h: Var,
) -> Result<Var, GnnError> {
    match layer {
        Layer::Gin { update, .. } => {
            let eps = cursor.next();
            let a = *prop
                .adjacency
                .get_or_insert_with(|| tape.constant(adjacency.clone()));
            // (A + (1 + eps) I) H = A H + H + eps H
            let neigh = tape.matmul(a, h)?;
            let self_term = tape.scale_by(h, eps)?;
            let agg = tape.add(neigh, h)?;
            let agg = tape.add(agg, self_term)?;
            match update {
                GinUpdate::Linear(l) => linear_on_tape(tape, l, cursor, agg),
                GinUpdate::Mlp(first, second) => {
                    let z = linear_on_tape(tape, first, cursor, agg)?;
                    let z = tape.relu(z);
                    linear_on_tape(tape, second, cursor, z)
                }
            }
        }
        Layer::Gcn { .. } => {
            let w = cursor.next();
            let norm = *prop
                .normalized
                .get_or_insert_with(|| tape.constant(normalized_adjacency(adjacency)));
            let z = tape.matmul(norm, h)?;
            Ok(tape.matmul(z, w)?)
        }
    }
}

/// One layer applied outside any training context.
pub fn layer_forward(layer: &Layer, adjacency: &Matrix, h: &Matrix) -> Result<Matrix, GnnError> {
    if h.cols() != layer.in_dim() {
        return Err(GnnError::Dimension {
            what: "layer input width".into(),
            expected: layer.in_dim(),
            got: h.cols(),
        });
    }
    if h.rows() != adjacency.rows() {
        return Err(GnnError::Dimension {
            what: "feature rows".into(),
            expected: adjacency.rows(),
            got: h.rows(),
        });
    }
    let mut tape = Tape::new();
    let params: Vec<Var> = layer_params(layer)
        .into_iter()
        .map(|m| tape.constant(m.clone()))
        .collect();
    let mut cursor = Cursor {
        vars: &params,
        pos: 0,
    };
    let mut prop = Propagation {
        adjacency: None,
        normalized: None,
    };
    let x = tape.constant(h.clone());
    let out = layer_on_tape(&mut tape, layer, &mut cursor, &mut prop, adjacency, x)?;
    Ok(tape.value(out).clone())
}

fn layer_params(layer: &Layer) -> Vec<&Matrix> {
    fn lin<'a>(out: &mut Vec<&'a Matrix>, l: &'a Linear) {
        out.push(&l.weight);
        if let Some(b) = &l.bias {
            out.push(b);
        }
    }
    let mut out = Vec::new();
    match layer {
        Layer::Gin { epsilon, update } => {
            out.push(epsilon);
            match update {
                GinUpdate::Linear(l) => lin(&mut out, l),
                GinUpdate::Mlp(a, b) => {
                    lin(&mut out, a);
                    lin(&mut out, b);
                }
            }
        }
        Layer::Gcn { weight } => out.push(weight),
    }
    out
}

pub fn readout(h: &Matrix, kind: Readout) -> Vec<f64> {
    let s = h.row_sum();
    match kind {
        Readout::Sum => s.into_vec(),
        Readout::Mean => s.scale(1.0 / h.rows() as f64).into_vec(),
    }
}

/// Graph embedding and logit with all parameters treated as constants.
pub fn model_forward(model: &GnnModel, g: &Graph) -> Result<ModelOutput, GnnError> {
    let mut tape = Tape::new();
    let bound = model.bind_with(&mut tape, |_| false);
    let x = tape.constant(g.features().clone());
    let (emb, logit) = model.forward_on_tape(&mut tape, &bound, g.adjacency(), x)?;
    Ok(ModelOutput {
        embedding: tape.value(emb).as_slice().to_vec(),
        logit: tape.value(logit)[(0, 0)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Head, LayerKind, ModelConfig, UpdateKind};
    use crate::graph::tests::{arb_graph, k2};
    use crate::graph::{invert_permutation, permute};
    use crate::tensor::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalized_adjacency_cases() {
        assert_eq!(normalized_adjacency(&Matrix::zeros(1, 1)), Matrix::scalar(1.0));
        // direct computation: A~ = ones(2,2), D~ = 2I
        let k2a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let expected = Matrix::filled(2, 2, 1.0 / (2.0f64.sqrt() * 2.0f64.sqrt()));
        let got = normalized_adjacency(&k2a);
        for (a, b) in got.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        // 4-cycle is 2-regular: rows sum to 1
        let c4 = Graph::from_edges("c4", &[(0, 1), (1, 2), (2, 3), (0, 3)], Matrix::zeros(4, 1), None).unwrap();
        let m = normalized_adjacency(c4.adjacency());
        for i in 0..4 {
            assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gin_layer_on_k2() {
        let g = k2();
        let layer = Layer::gin_linear(0.0, Matrix::scalar(1.0));
        let h = layer_forward(&layer, g.adjacency(), g.features()).unwrap();
        assert_eq!(h.as_slice(), &[3.0, 3.0]);
        assert_eq!(readout(&h, Readout::Sum), vec![6.0]);
        assert_eq!(readout(&h, Readout::Mean), vec![3.0]);
    }

    #[test]
    fn gin_empty_adjacency_identity() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0], [3.0, 3.0]]).unwrap();
        let layer = Layer::gin_linear(0.0, Matrix::identity(2));
        assert_eq!(layer_forward(&layer, &Matrix::zeros(3, 3), &x).unwrap(), x);
    }

    #[test]
    fn gcn_single_node() {
        let layer = Layer::Gcn { weight: Matrix::scalar(2.0) };
        let h = layer_forward(&layer, &Matrix::zeros(1, 1), &Matrix::scalar(3.0)).unwrap();
        assert_eq!(h, Matrix::scalar(6.0));
    }

    #[test]
    fn layer_dimension_mismatch() {
        let layer = Layer::gin_linear(0.0, Matrix::identity(2));
        assert!(matches!(
            layer_forward(&layer, &Matrix::zeros(1, 1), &Matrix::zeros(1, 3)),
            Err(GnnError::Dimension { .. })
        ));
    }

    #[test]
    fn single_row_readouts_agree() {
        let h = Matrix::row_vector(vec![1.5, -2.0]);
        assert_eq!(readout(&h, Readout::Sum), readout(&h, Readout::Mean));
        assert_eq!(readout(&h, Readout::Sum), vec![1.5, -2.0]);
    }

    #[test]
    fn solver_grade_model_on_k2() {
        let m = GnnModel::solver_grade(Matrix::scalar(1.0), 0.0).unwrap();
        assert_eq!(model_forward(&m, &k2()).unwrap().embedding, vec![6.0]);
    }

    #[test]
    fn zero_features_give_zero_embedding() {
        let cfg = ModelConfig {
            kind: LayerKind::Gin,
            num_layers: 3,
            hidden_dim: 4,
            update: UpdateKind::Mlp,
            bias: false,
            epsilon: 0.3,
            readout: Readout::Sum,
            activation: Activation::Relu,
            head_layers: 2,
        };
        let m = cfg.build(3, 5).unwrap();
        let g = Graph::from_edges("z", &[(0, 1), (1, 2)], Matrix::zeros(3, 3), None).unwrap();
        assert!(model_forward(&m, &g).unwrap().embedding.iter().all(|&v| v == 0.0));
    }

    fn random_model(seed: u64, kind: LayerKind, readout: Readout) -> GnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            kind,
            num_layers: 2,
            hidden_dim: 3,
            update: UpdateKind::Mlp,
            bias: true,
            epsilon: rng.random_range(0.0..1.0),
            readout,
            activation: Activation::Relu,
            head_layers: 2,
        };
        let mut m = cfg.build(2, seed).unwrap();
        // nonzero biases so they matter for gradients
        for p in m.params_mut() {
            for v in p.as_mut_slice() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        m
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..6 {
            let kind = if seed % 2 == 0 { LayerKind::Gin } else { LayerKind::Gcn };
            let readout = if seed % 3 == 0 { Readout::Mean } else { Readout::Sum };
            let model = random_model(seed, kind, readout);
            let n = 5;
            let edges = [(0, 1), (1, 2), (2, 3), (1, 4)];
            let x = Matrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let g = Graph::from_edges("g", &edges, x, Some(1)).unwrap();
            let inputs: Vec<Matrix> = model.params().iter().map(|p| p.value.clone()).collect();
            let report = grad_check(
                |tape, vars| {
                    let bound = Bound {
                        vars: vars.to_vec(),
                        groups: model.params().iter().map(|p| p.group).collect(),
                    };
                    let xv = tape.constant(g.features().clone());
                    let (_, logit) = model
                        .forward_on_tape(tape, &bound, g.adjacency(), xv)
                        .map_err(|e| match e {
                            GnnError::Tensor(t) => t,
                            other => panic!("{other}"),
                        })?;
                    tape.bce_loss(logit, &[1.0])
                },
                &inputs,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn frozen_groups_get_no_gradient() {
        let mut m = random_model(1, LayerKind::Gin, Readout::Sum);
        m.freeze(&m.backbone_groups()).unwrap();
        let g = Graph::from_edges("g", &[(0, 1)], Matrix::identity(2), None).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let x = tape.constant(g.features().clone());
        let (_, logit) = m.forward_on_tape(&mut tape, &b, g.adjacency(), x).unwrap();
        let loss = tape.bce_loss(logit, &[0.0]).unwrap();
        tape.backward(loss).unwrap();
        for (group, v) in b.iter() {
            assert_eq!(tape.requires_grad(v), group == GroupId::Head);
        }
        let _ = Head::init(3, 1, 0).unwrap();
    }

    proptest! {
        #[test]
        fn permutation_invariance(
            (g, perm) in arb_graph(10, 2).prop_flat_map(|g| {
                let n = g.node_count();
                (Just(g), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
            }),
            seed in 0u64..50,
        ) {
            for kind in [LayerKind::Gin, LayerKind::Gcn] {
                for ro in [Readout::Sum, Readout::Mean] {
                    let m = random_model(seed, kind, ro);
                    let a = model_forward(&m, &g).unwrap();
                    let p = permute(&g, &perm).unwrap();
                    let b = model_forward(&m, &p).unwrap();
                    for (x, y) in a.embedding.iter().zip(&b.embedding) {
                        prop_assert!((x - y).abs() <= 1e-12);
                    }
                    let back = permute(&p, &invert_permutation(&perm)).unwrap();
                    prop_assert_eq!(&back, &g);
                }
            }
        }

        #[test]
        fn mean_is_sum_over_n(rows in 1usize..8, vals in proptest::collection::vec(-5.0..5.0f64, 24)) {
            let h = Matrix::from_fn(rows, 3, |i, j| vals[i * 3 + j]);
            let s = readout(&h, Readout::Sum);
            let m = readout(&h, Readout::Mean);
            for (a, b) in s.iter().zip(&m) {
                prop_assert_eq!(a * (1.0 / rows as f64), *b);
            }
        }
    }
}
