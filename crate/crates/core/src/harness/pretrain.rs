//! Self-supervised edge prediction: score `(u, v)` by the dot product of
//! final node states and separate edges from sampled non-edges.

use super::{evaluate_auc, HarnessError, TrainConfig};
use crate::gnn::{GnnModel, GroupId};
use crate::graph::{Dataset, Graph, Split};
use crate::tensor::{Matrix, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Every edge as a positive and up to as many random non-edges as
/// negatives.
fn sample_pairs(g: &Graph, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let edges = g.edges();
    let n = g.node_count();
    let mut non_edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
        .filter(|&(u, v)| !g.has_edge(u, v))
        .collect();
    non_edges.shuffle(rng);
    non_edges.truncate(edges.len());
    let mut us = Vec::new();
    let mut vs = Vec::new();
    let mut ys = Vec::new();
    for (pairs, y) in [(&edges, 1.0), (&non_edges, 0.0)] {
        for &(u, v) in pairs.iter() {
            us.push(u);
            vs.push(v);
            ys.push(y);
        }
    }
    (us, vs, ys)
}

fn pair_scores(tape: &mut Tape, h: Var, us: &[usize], vs: &[usize]) -> Result<Var, HarnessError> {
    let hu = tape.select_rows(h, us)?;
    let hv = tape.select_rows(h, vs)?;
    let prod = tape.hadamard(hu, hv)?;
    Ok(tape.sum_cols(prod))
}

type Batch<'a> = Vec<(&'a Graph, Vec<usize>, Vec<usize>)>;

/// Mean logistic loss over a batch and backbone gradients.
fn batch_loss(
    model: &GnnModel,
    batch: &Batch<'_>,
    labels: &[f64],
    with_grad: bool,
) -> Result<(f64, Vec<Option<Matrix>>), HarnessError> {
    let mut tape = Tape::new();
    let bound = model.bind_with(&mut tape, |g| g != GroupId::Head);
    let mut parts = Vec::with_capacity(batch.len());
    for (g, us, vs) in batch {
        let x = tape.constant(g.features().clone());
        let h = model.node_embeddings(&mut tape, &bound, g.adjacency(), x)?;
        parts.push(pair_scores(&mut tape, h, us, vs)?);
    }
    let z = tape.vstack(&parts)?;
    let loss = tape.bce_loss(z, labels)?;
    let value = tape.value(loss)[(0, 0)];
    if !with_grad || !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    Ok((
        value,
        bound
            .iter()
            .map(|(g, v)| (g != GroupId::Head).then(|| tape.grad(v)))
            .collect(),
    ))
}

fn stepped(model: &GnnModel, grads: &[Option<Matrix>], lr: f64) -> GnnModel {
    let mut next = model.clone();
    for (slot, g) in next.params_mut().into_iter().zip(grads) {
        if let Some(g) = g {
            slot.axpy(-lr, g).expect("gradient matches parameter shape");
        }
    }
    next
}

fn pretrain_graphs(ds: &Dataset) -> Vec<&Graph> {
    let train = ds.split(Split::Train);
    if train.is_empty() {
        ds.graphs().iter().collect()
    } else {
        train
    }
}

/// Trains every backbone group (the head is left alone) on edge
/// prediction over the training split, or the whole dataset if it has no
/// splits. Frozen flags are preserved.
pub fn pretrain_edge_prediction(
    model: &GnnModel,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<GnnModel, HarnessError> {
    cfg.validate()?;
    let graphs: Vec<&Graph> = pretrain_graphs(ds).into_iter().filter(|g| g.edge_count() > 0).collect();
    if graphs.is_empty() {
        return Err(HarnessError::NoEdges);
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut lr = cfg.learning_rate;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut labels = Vec::new();
            for &i in chunk {
                let (us, vs, ys) = sample_pairs(graphs[i], &mut rng);
                labels.extend(ys);
                batch.push((graphs[i], us, vs));
            }
            let (loss, grads) = batch_loss(&model, &batch, &labels, true)?;
            if !loss.is_finite() {
                return Err(HarnessError::NonFinite { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            if !cfg.backtracking {
                model = stepped(&model, &grads, lr);
                continue;
            }
            let gn2: f64 = grads.iter().flatten().map(Matrix::frobenius_sq).sum();
            if gn2 == 0.0 {
                continue;
            }
            for _ in 0..MAX_HALVINGS {
                let cand = stepped(&model, &grads, lr);
                let (lc, _) = batch_loss(&cand, &batch, &labels, false)?;
                if lc.is_finite() && lc <= loss - ARMIJO_C * lr * gn2 {
                    model = cand;
                    lr *= 2.0;
                    break;
                }
                lr *= 0.5;
            }
        }
        log::debug!("pretrain epoch {epoch}: loss {:.6}", epoch_loss / graphs.len() as f64);
    }
    Ok(model)
}

/// Edge-vs-non-edge ROC-AUC of dot-product scores on `graphs`, with
/// negatives sampled from `seed`.
pub fn edge_prediction_auc(model: &GnnModel, graphs: &[&Graph], seed: u64) -> Result<f64, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for g in graphs {
        let (us, vs, ys) = sample_pairs(g, &mut rng);
        if us.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let bound = model.bind_with(&mut tape, |_| false);
        let x = tape.constant(g.features().clone());
        let h = model.node_embeddings(&mut tape, &bound, g.adjacency(), x)?;
        let s = pair_scores(&mut tape, h, &us, &vs)?;
        scores.extend_from_slice(tape.value(s).as_slice());
        labels.extend(ys.iter().map(|&y| y as u8));
    }
    evaluate_auc(&scores, &labels)
}
