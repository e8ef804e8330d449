use super::{Matrix, Tape, TensorError, Var};

/// Gradients with magnitude below this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst relative error.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub passed: bool,
}

/// Compares tape gradients of a scalar function against central differences
/// `(f(x + eps) - f(x - eps)) / (2 eps)`, one coordinate at a time.
///
/// Relative error per coordinate is `|analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-3)`.
pub fn grad_check<F>(
    f: F,
    inputs: &[Matrix],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    assert!(eps > 0.0, "eps must be positive");

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Matrix> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |xs: &[Matrix]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|m| t.constant(m.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.value(o);
        if v.shape() != (1, 1) {
            return Err(TensorError::NotScalar("grad_check"));
        }
        Ok(v[(0, 0)])
    };

    let mut report = GradCheckReport {
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        passed: true,
    };
    let mut probe: Vec<Matrix> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for c in 0..input.len() {
            let x0 = input.as_slice()[c];
            probe[k].as_mut_slice()[c] = x0 + eps;
            let plus = eval(&probe)?;
            probe[k].as_mut_slice()[c] = x0 - eps;
            let minus = eval(&probe)?;
            probe[k].as_mut_slice()[c] = x0;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[k].as_slice()[c];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((k, c));
            }
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
