//! Closed-form prompts for single-layer linear GIN, `H = (A + (1+eps) I) X Theta`.
//!
//! With sum readout the embedding is `1^T (A + (1+eps) I) X Theta`, so adding
//! `1 p` to `X` shifts it by `(D + N + N eps) p Theta`, where `D` is the total
//! degree. Each transformation shifts it by `c Theta` for some row `c`, and
//! `p = c / (D + N + N eps)` matches it for every `Theta`.
//!
//! Composite steps are measured against the running intermediate graph but
//! always divided by the host graph's denominator, since the prompt is
//! applied to the host.

use super::{PromptError, PromptVector};
use crate::gnn::{GnnModel, Readout};
use crate::graph::{apply_transform, ComponentEdit, Graph, TransformSpec};
use crate::tensor::Matrix;

/// `D + N + N eps` for `g`.
pub fn solver_denominator(g: &Graph, epsilon: f64) -> f64 {
    let n = g.node_count() as f64;
    g.total_degree() as f64 + n + n * epsilon
}

/// Column sums of `(A + (1+eps) I) X`.
fn mixed_column_sums(a: &Matrix, x: &Matrix, epsilon: f64) -> Vec<f64> {
    let ax = a.matmul(x).expect("square adjacency matches features");
    let s_ax = ax.row_sum();
    let s_x = x.row_sum();
    s_ax.as_slice()
        .iter()
        .zip(s_x.as_slice())
        .map(|(p, q)| p + (1.0 + epsilon) * q)
        .collect()
}

/// Embedding shift (before `Theta`) caused by `step` on `current`, and the
/// graph it produces.
fn step_numerator(
    current: &Graph,
    step: &TransformSpec,
    epsilon: f64,
) -> Result<(Vec<f64>, Graph), PromptError> {
    let next = apply_transform(current, step)?;
    let f = current.feature_dim();
    let num = match step {
        TransformSpec::Feature { delta } => mixed_column_sums(current.adjacency(), delta, epsilon),
        TransformSpec::Link { delta } => delta
            .matmul(current.features())
            .expect("validated by apply_transform")
            .row_sum()
            .into_vec(),
        TransformSpec::IsolatedComponents { edits } => {
            let mut acc = vec![0.0; f];
            for edit in edits {
                let part = match edit {
                    ComponentEdit::Add(c) => c.clone(),
                    ComponentEdit::Remove(nodes) => current.induced_subgraph(nodes)?,
                };
                let s = mixed_column_sums(part.adjacency(), part.features(), epsilon);
                let sign = edit.indicator();
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += sign * v;
                }
            }
            acc
        }
        TransformSpec::Composite { steps } => {
            let mut acc = vec![0.0; f];
            let mut g = current.clone();
            for s in steps {
                let (num, after) = step_numerator(&g, s, epsilon)?;
                for (a, v) in acc.iter_mut().zip(num) {
                    *a += v;
                }
                g = after;
            }
            acc
        }
    };
    Ok((num, next))
}

/// Epsilon of a solver-grade model, after checking it applies to `g`/`spec`.
fn check_solvable(model: &GnnModel, g: &Graph, spec: &TransformSpec) -> Result<f64, PromptError> {
    if let Some(why) = model.linear_gin_violation() {
        return Err(PromptError::NotSolverGrade(why));
    }
    if model.input_dim() != g.feature_dim() {
        return Err(PromptError::Dimension {
            expected: model.input_dim(),
            got: g.feature_dim(),
        });
    }
    let target = apply_transform(g, spec)?;
    if model.readout() == Readout::Mean && target.node_count() != g.node_count() {
        return Err(PromptError::MeanReadoutNodeCountChange {
            from: g.node_count(),
            to: target.node_count(),
        });
    }
    Ok(model.layers()[0].epsilon().expect("linear GIN has epsilon"))
}

fn denominator(g: &Graph, epsilon: f64) -> Result<f64, PromptError> {
    let d = solver_denominator(g, epsilon);
    if !d.is_finite() || d.abs() < 1e-12 {
        return Err(PromptError::ZeroDenominator(d));
    }
    Ok(d)
}

fn divide(num: Vec<f64>, denom: f64) -> PromptVector {
    PromptVector::new(num.into_iter().map(|v| v / denom).collect()).expect("finite over nonzero")
}

/// Prompt `p` with `embed(A, X + 1 p) = embed(spec(G))` for a solver-grade
/// model.
pub fn solve_prompt(g: &Graph, spec: &TransformSpec, model: &GnnModel) -> Result<PromptVector, PromptError> {
    let eps = check_solvable(model, g, spec)?;
    let denom = denominator(g, eps)?;
    let (num, _) = step_numerator(g, spec, eps)?;
    Ok(divide(num, denom))
}

/// Contribution of one step applied to `current`, scaled for a prompt on
/// `host`.
pub fn solve_step(
    host: &Graph,
    current: &Graph,
    step: &TransformSpec,
    model: &GnnModel,
) -> Result<PromptVector, PromptError> {
    let eps = check_solvable(model, current, step)?;
    let denom = denominator(host, eps)?;
    let (num, _) = step_numerator(current, step, eps)?;
    Ok(divide(num, denom))
}

/// Per-step prompts of a composite (a single entry otherwise); they sum to
/// [`solve_prompt`].
pub fn solve_steps(g: &Graph, spec: &TransformSpec, model: &GnnModel) -> Result<Vec<PromptVector>, PromptError> {
    let eps = check_solvable(model, g, spec)?;
    let denom = denominator(g, eps)?;
    let steps: Vec<&TransformSpec> = match spec {
        TransformSpec::Composite { steps } => steps.iter().collect(),
        other => vec![other],
    };
    let mut current = g.clone();
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        let (num, next) = step_numerator(&current, s, eps)?;
        out.push(divide(num, denom));
        current = next;
    }
    Ok(out)
}
