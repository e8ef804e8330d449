//! Gradient descent on the prompt alone, backbone frozen.

use super::{check_dim, prompted_features, PromptError, PromptVector};
use crate::gnn::{model_forward, GnnModel};
use crate::graph::{apply_transform, Graph, TransformSpec};
use crate::tensor::{Matrix, Tape};

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Stop once the best residual is at or below this.
    pub target_residual: f64,
    /// Armijo backtracking from the current step size, doubling it after
    /// each accepted step.
    pub backtracking: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            learning_rate: 0.01,
            target_residual: 1e-14,
            backtracking: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Best prompt seen.
    pub prompt: PromptVector,
    /// Its squared embedding distance.
    pub residual: f64,
    /// Residual at `p = 0`.
    pub initial_residual: f64,
    /// Best-so-far residual after each step, starting with the initial one.
    pub history: Vec<f64>,
}

struct Objective<'a> {
    model: &'a GnnModel,
    g: &'a Graph,
    target: Matrix,
}

impl Objective<'_> {
    /// `||embed(A, X + 1 p) - target||^2` and, if asked, its gradient in `p`.
    fn eval(&self, p: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>), PromptError> {
        let mut tape = Tape::new();
        let bound = self.model.bind_with(&mut tape, |_| false);
        let pv = tape.leaf(Matrix::row_vector(p.to_vec()), with_grad);
        let xs = prompted_features(&mut tape, self.g.features(), pv)?;
        let emb = self.model.graph_embedding(&mut tape, &bound, self.g.adjacency(), xs)?;
        let t = tape.constant(self.target.clone());
        let d = tape.sub(emb, t)?;
        let sq = tape.hadamard(d, d)?;
        let per_row = tape.sum_cols(sq);
        let loss = tape.row_sum(per_row);
        let value = tape.value(loss)[(0, 0)];
        if !with_grad || !value.is_finite() {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        Ok((value, tape.grad(pv).into_vec()))
    }
}

/// Minimizes `||f(A, X + 1 p) - f(spec(G))||^2` over `p`, starting at `0`.
/// Fails if the objective becomes non-finite without backtracking.
pub fn fit_prompt(
    model: &GnnModel,
    g: &Graph,
    spec: &TransformSpec,
    cfg: &FitConfig,
) -> Result<FitResult, PromptError> {
    let f = g.feature_dim();
    check_dim(g, &PromptVector::zeros(model.input_dim()))?;
    let target = apply_transform(g, spec)?;
    let obj = Objective {
        model,
        g,
        target: Matrix::row_vector(model_forward(model, &target)?.embedding),
    };

    let mut p = vec![0.0; f];
    let (mut loss, mut grad) = obj.eval(&p, true)?;
    if !loss.is_finite() {
        return Err(PromptError::NonFinite { step: 0 });
    }
    let initial_residual = loss;
    let mut best = (loss, p.clone());
    let mut history = vec![loss];
    let mut lr = cfg.learning_rate;

    for step in 1..=cfg.steps {
        if best.0 <= cfg.target_residual {
            break;
        }
        let gnorm2: f64 = grad.iter().map(|v| v * v).sum();
        if gnorm2 == 0.0 {
            break;
        }
        let step_to = |lr: f64| -> Vec<f64> { p.iter().zip(&grad).map(|(x, d)| x - lr * d).collect() };

        let candidate = if cfg.backtracking {
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let c = step_to(lr);
                let (lc, _) = obj.eval(&c, false)?;
                if lc.is_finite() && lc <= loss - ARMIJO_C * lr * gnorm2 {
                    accepted = Some(c);
                    break;
                }
                lr *= 0.5;
            }
            match accepted {
                Some(c) => {
                    lr *= 2.0;
                    c
                }
                None => break,
            }
        } else {
            step_to(lr)
        };

        p = candidate;
        (loss, grad) = obj.eval(&p, true)?;
        if !loss.is_finite() {
            return Err(PromptError::NonFinite { step });
        }
        if loss < best.0 {
            best = (loss, p.clone());
        }
        history.push(best.0);
    }

    log::debug!(
        "fit_prompt: {} steps, residual {:.3e} -> {:.3e}",
        history.len() - 1,
        initial_residual,
        best.0
    );
    Ok(FitResult {
        prompt: PromptVector::new(best.1)?,
        residual: best.0,
        initial_residual,
        history,
    })
}
