use super::{apply_prompt, PromptError, PromptVector};
use crate::gnn::{model_forward, GnnModel};
use crate::graph::{apply_transform, Graph, TransformSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub prompt_embedding: Vec<f64>,
    pub target_embedding: Vec<f64>,
    /// Max coordinate-wise absolute difference.
    pub abs_error: f64,
    /// `abs_error / (max |target| + 1e-30)`.
    pub rel_error: f64,
    /// `rel_error <= tol`.
    pub passed: bool,
}

/// Compares `embed(A, X + 1 p)` with `embed(spec(G))` by direct forward passes.
pub fn verify_equivalence(
    model: &GnnModel,
    g: &Graph,
    spec: &TransformSpec,
    p: &PromptVector,
    tol: f64,
) -> Result<EquivalenceReport, PromptError> {
    let prompted = apply_prompt(g, p)?;
    let target = apply_transform(g, spec)?;
    let prompt_embedding = model_forward(model, &prompted)?.embedding;
    let target_embedding = model_forward(model, &target)?.embedding;
    let abs_error = prompt_embedding
        .iter()
        .zip(&target_embedding)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = target_embedding.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let rel_error = abs_error / (scale + 1e-30);
    Ok(EquivalenceReport {
        rel_error,
        passed: rel_error <= tol,
        abs_error,
        prompt_embedding,
        target_embedding,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::k2;
    use crate::prompt::solve_prompt;
    use crate::tensor::Matrix;

    #[test]
    fn identity_with_zero_prompt_is_exact() {
        let m = GnnModel::solver_grade(Matrix::from_rows(&[[0.3, -2.0]]).unwrap(), 0.5).unwrap();
        let g = k2();
        let r = verify_equivalence(&m, &g, &TransformSpec::identity(&g), &PromptVector::zeros(1), 1e-9).unwrap();
        assert_eq!(r.rel_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn perturbed_prompt_fails() {
        let m = GnnModel::solver_grade(Matrix::scalar(1.0), 0.0).unwrap();
        let g = k2();
        let spec = TransformSpec::link_edits(2, &[], &[(0, 1)]);
        let p = solve_prompt(&g, &spec, &m).unwrap();
        assert!(verify_equivalence(&m, &g, &spec, &p, 1e-9).unwrap().passed);
        let off = p.add(&PromptVector::new(vec![1.0]).unwrap());
        let r = verify_equivalence(&m, &g, &spec, &off, 1e-9).unwrap();
        assert!(!r.passed);
        assert!((r.abs_error - 4.0).abs() < 1e-12);
    }
}
