use super::{
    accuracy, evaluate_auc, CurveRecord, HarnessError, LossKind, Metric, MetricCurve, Strategy, TrainConfig,
};
use crate::gnn::{model_forward, GnnModel};
use crate::graph::{Dataset, Graph, Split};
use crate::prompt::{apply_prompt, PromptVector};
use crate::tensor::{Matrix, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GnnModel,
    /// Learned prompt, for strategies that use one.
    pub prompt: Option<PromptVector>,
    pub curve: MetricCurve,
    /// Loss over the whole training split with the final parameters.
    pub final_train_loss: f64,
}

#[derive(Clone)]
pub(super) struct State {
    pub model: GnnModel,
    pub prompt: Option<Matrix>,
}

pub(super) struct Grads {
    params: Vec<Option<Matrix>>,
    prompt: Option<Matrix>,
}

impl Grads {
    fn norm_sq(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .chain(self.prompt.as_ref())
            .map(Matrix::frobenius_sq)
            .sum()
    }
}

impl State {
    /// Mean loss over `graphs` and, if asked, gradients of trainable groups.
    fn loss(
        &self,
        graphs: &[&Graph],
        labels: &[f64],
        kind: LossKind,
        with_grad: bool,
    ) -> Result<(f64, Option<Grads>), HarnessError> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let pv = self.prompt.as_ref().map(|p| tape.param(p.clone()));
        let mut logits = Vec::with_capacity(graphs.len());
        for g in graphs {
            let mut x = tape.constant(g.features().clone());
            if let Some(p) = pv {
                x = tape.broadcast_add_row(x, p)?;
            }
            let (_, logit) = self.model.forward_on_tape(&mut tape, &bound, g.adjacency(), x)?;
            logits.push(logit);
        }
        let z = tape.vstack(&logits)?;
        let loss = match kind {
            LossKind::Bce => tape.bce_loss(z, labels)?,
            LossKind::Mse => {
                let y = tape.constant(Matrix::column_vector(labels.to_vec()));
                tape.mse_loss(z, y)?
            }
        };
        let value = tape.value(loss)[(0, 0)];
        if !with_grad || !value.is_finite() {
            return Ok((value, None));
        }
        tape.backward(loss)?;
        let params = bound
            .iter()
            .map(|(g, v)| (!self.model.is_frozen(g)).then(|| tape.grad(v)))
            .collect();
        let prompt = pv.map(|p| tape.grad(p));
        Ok((value, Some(Grads { params, prompt })))
    }

    fn stepped(&self, grads: &Grads, lr: f64) -> State {
        let mut next = self.clone();
        for (slot, g) in next.model.params_mut().into_iter().zip(&grads.params) {
            if let Some(g) = g {
                slot.axpy(-lr, g).expect("gradient matches parameter shape");
            }
        }
        if let (Some(p), Some(g)) = (next.prompt.as_mut(), &grads.prompt) {
            p.axpy(-lr, g).expect("gradient matches prompt shape");
        }
        next
    }

    /// Logits with the prompt applied, in input order.
    fn scores(&self, graphs: &[&Graph]) -> Result<Vec<f64>, HarnessError> {
        let prompt = self
            .prompt
            .as_ref()
            .map(|p| PromptVector::new(p.as_slice().to_vec()))
            .transpose()?;
        graphs
            .par_iter()
            .map(|g| {
                let out = match &prompt {
                    Some(p) => model_forward(&self.model, &apply_prompt(g, p)?)?,
                    None => model_forward(&self.model, g)?,
                };
                Ok(out.logit)
            })
            .collect()
    }
}

fn labels_of(graphs: &[&Graph]) -> Result<Vec<u8>, HarnessError> {
    graphs
        .iter()
        .map(|g| g.label().ok_or_else(|| HarnessError::MissingLabel(g.id().to_string())))
        .collect()
}

fn metric(scores: &[f64], labels: &[u8], cfg: &TrainConfig) -> Result<f64, HarnessError> {
    match cfg.metric {
        Metric::Auc => match evaluate_auc(scores, labels) {
            Err(HarnessError::SingleClass { .. }) => Ok(f64::NAN),
            other => other,
        },
        Metric::Accuracy => {
            let threshold = match cfg.loss {
                LossKind::Bce => 0.0,
                LossKind::Mse => 0.5,
            };
            accuracy(scores, labels, threshold)
        }
    }
}

/// Gradient descent on the strategy's trainable set. Groups outside it are
/// never written. With a prompt, every graph (evaluation too) passes
/// through it.
pub fn train(
    model: &GnnModel,
    strategy: Strategy,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let mut m = model.clone();
    strategy.apply(&mut m)?;
    if m.count_params(true) == 0 && !strategy.uses_prompt() {
        return Err(HarnessError::EmptyTrainable);
    }
    let train_set = ds.split(Split::Train);
    let test_set = ds.split(Split::Test);
    if train_set.is_empty() {
        return Err(HarnessError::MissingSplit(Split::Train));
    }
    if test_set.is_empty() {
        return Err(HarnessError::MissingSplit(Split::Test));
    }
    let train_labels = labels_of(&train_set)?;
    let test_labels = labels_of(&test_set)?;
    let train_targets: Vec<f64> = train_labels.iter().map(|&y| f64::from(y)).collect();

    let mut state = State {
        prompt: strategy.uses_prompt().then(|| Matrix::zeros(1, m.input_dim())),
        model: m,
    };
    let mut curve = MetricCurve::new();
    let mut record = |state: &State, epoch: usize| -> Result<f64, HarnessError> {
        let (loss, _) = state.loss(&train_set, &train_targets, cfg.loss, false)?;
        if !loss.is_finite() {
            return Err(HarnessError::NonFinite { epoch });
        }
        curve.push(CurveRecord {
            epoch,
            train_loss: loss,
            train_metric: metric(&state.scores(&train_set)?, &train_labels, cfg)?,
            test_metric: metric(&state.scores(&test_set)?, &test_labels, cfg)?,
        });
        Ok(loss)
    };
    let mut final_loss = record(&state, 0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut lr = cfg.learning_rate;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let graphs: Vec<&Graph> = batch.iter().map(|&i| train_set[i]).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| train_targets[i]).collect();
            let (loss, grads) = state.loss(&graphs, &targets, cfg.loss, true)?;
            let Some(grads) = grads else {
                return Err(HarnessError::NonFinite { epoch });
            };
            if !cfg.backtracking {
                state = state.stepped(&grads, lr);
                continue;
            }
            let gn2 = grads.norm_sq();
            if gn2 == 0.0 {
                continue;
            }
            for _ in 0..MAX_HALVINGS {
                let cand = state.stepped(&grads, lr);
                let (lc, _) = cand.loss(&graphs, &targets, cfg.loss, false)?;
                if lc.is_finite() && lc <= loss - ARMIJO_C * lr * gn2 {
                    state = cand;
                    lr *= 2.0;
                    break;
                }
                lr *= 0.5;
            }
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            final_loss = record(&state, epoch)?;
            log::debug!("{strategy} epoch {epoch}: train loss {final_loss:.6}");
        }
    }

    let prompt = state
        .prompt
        .map(|p| PromptVector::new(p.into_vec()))
        .transpose()?;
    Ok(TrainOutcome {
        model: state.model,
        prompt,
        curve,
        final_train_loss: final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::GroupId;
    use crate::graph::{generate_synthetic_dataset, ClassRule};
    use crate::harness::tests::small_model;

    fn data() -> Dataset {
        generate_synthetic_dataset(5, 40, ClassRule::CommunityPair, 3)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 8,
            seed: 2,
            ..TrainConfig::default()
        }
    }

    fn bits(m: &GnnModel, g: GroupId) -> Vec<u64> {
        m.params()
            .iter()
            .filter(|p| p.group == g)
            .flat_map(|p| p.value.as_slice().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn strategies_only_touch_their_groups() {
        let ds = data();
        let base = small_model(3, 3);
        for s in [
            Strategy::FullFineTune,
            Strategy::GraphPromptFeature,
            Strategy::PartialK(1),
            Strategy::MlpHeadK(2),
            Strategy::LinearProbe,
        ] {
            let m = s.prepare(&base, 1).unwrap();
            let out = train(&m, s, &ds, &cfg()).unwrap();
            let trainable = s.trainable_groups(&m).unwrap();
            for g in m.groups() {
                let same = bits(&m, g) == bits(&out.model, g);
                assert_eq!(same, !trainable.contains(&g), "{s} {g}");
            }
            assert_eq!(out.prompt.is_some(), s.uses_prompt());
            assert_eq!(out.curve.records().len(), 4);
        }
    }

    #[test]
    fn prompt_changes_the_loss() {
        let ds = data();
        let m = Strategy::GraphPromptFeature.prepare(&small_model(2, 3), 1).unwrap();
        let graphs = ds.split(Split::Train);
        let y: Vec<f64> = graphs.iter().map(|g| f64::from(g.label().unwrap())).collect();
        let with = State {
            model: m.clone(),
            prompt: Some(Matrix::row_vector(vec![0.4, -0.3, 0.2])),
        };
        let without = State { model: m, prompt: None };
        let a = with.loss(&graphs, &y, LossKind::Bce, false).unwrap().0;
        let b = without.loss(&graphs, &y, LossKind::Bce, false).unwrap().0;
        assert_ne!(a, b);
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = data();
        let m = Strategy::FullFineTune.prepare(&small_model(2, 3), 1).unwrap();
        let a = train(&m, Strategy::FullFineTune, &ds, &cfg()).unwrap();
        let b = train(&m, Strategy::FullFineTune, &ds, &cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.curve.to_csv(), b.curve.to_csv());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = data();
        let m = Strategy::FullFineTune.prepare(&small_model(2, 3), 1).unwrap();
        let c = TrainConfig {
            learning_rate: 1e12,
            epochs: 5,
            ..cfg()
        };
        assert!(matches!(
            train(&m, Strategy::FullFineTune, &ds, &c),
            Err(HarnessError::NonFinite { .. })
        ));
    }

    #[test]
    fn missing_split() {
        let ds = Dataset::new(data().graphs().to_vec(), vec![None; 40]).unwrap();
        let m = Strategy::LinearProbe.prepare(&small_model(1, 3), 1).unwrap();
        assert!(matches!(
            train(&m, Strategy::LinearProbe, &ds, &cfg()),
            Err(HarnessError::MissingSplit(Split::Train))
        ));
    }

    #[test]
    fn full_batch_backtracking_loss_is_non_increasing() {
        let ds = data();
        let m = Strategy::GraphPromptFeature.prepare(&crate::gnn::GnnModel::solver_grade(Matrix::identity(3), 0.0).unwrap(), 1).unwrap();
        let c = TrainConfig {
            epochs: 30,
            batch_size: 1000,
            loss: LossKind::Mse,
            backtracking: true,
            ..cfg()
        };
        let out = train(&m, Strategy::GraphPromptFeature, &ds, &c).unwrap();
        let losses: Vec<f64> = out.curve.records().iter().map(|r| r.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
        assert!(losses.last() < losses.first());
    }
}
