//! Central finite-difference gradient checks.

use super::params::{Bound, ParamStore};
use super::{Matrix, Tape, Var};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all inputs.
    pub max_rel_error: f64,
    /// Relative error per input matrix.
    pub per_input: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= tol
    }
}

/// Relative error `‖a−n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-6)`.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-6);
    analytic.max_abs_diff(numeric) / scale
}

/// Compare tape gradients of `f` with central differences of step `h`.
pub fn check_gradients<F>(inputs: &[Matrix], h: f64, f: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|m| tape.param(m.clone())).collect();
        let loss = f(&tape, &vars);
        let g = tape.gradient(loss);
        vars.iter().map(|v| g.wrt(*v)).collect()
    };
    let eval = |xs: &[Matrix]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|m| tape.constant(m.clone())).collect();
        f(&tape, &vars).item()
    };
    let mut work: Vec<Matrix> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut numeric = Matrix::zeros(inputs[k].rows(), inputs[k].cols());
        for e in 0..inputs[k].len() {
            let orig = inputs[k].as_slice()[e];
            work[k].as_mut_slice()[e] = orig + h;
            let up = eval(&work);
            work[k].as_mut_slice()[e] = orig - h;
            let down = eval(&work);
            work[k].as_mut_slice()[e] = orig;
            numeric.as_mut_slice()[e] = (up - down) / (2.0 * h);
        }
        per_input.push(relative_error(&analytic[k], &numeric));
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    GradCheckReport { max_rel_error, per_input }
}

/// Gradient check over every matrix of a [`ParamStore`].
pub fn check_store_gradients<F>(store: &ParamStore, h: f64, f: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Var<'t>,
{
    let inputs: Vec<Matrix> = store.values().to_vec();
    check_gradients(&inputs, h, |tape, vars| {
        let bound = Bound::from_vars(vars.to_vec());
        f(tape, &bound)
    })
}
