//! Central finite-difference checks against the tape's reverse pass.

use crate::autodiff::{Tape, Var};
use crate::error::{GlaError, Result};
use crate::matrix::Matrix;

/// Relative error used throughout the checks: `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of a scalar function of one matrix
/// with central differences of step `step`. Returns the largest entrywise
/// relative error.
pub fn grad_check<F>(f: F, x: &Matrix, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let errs = grad_check_many(|t, vars| f(t, vars[0]), std::slice::from_ref(x), step)?;
    Ok(errs[0])
}

/// Multi-input variant of [`grad_check`]: every input is a trainable leaf,
/// and one maximum relative error is reported per input.
pub fn grad_check_many<F>(f: F, inputs: &[Matrix], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(GlaError::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |values: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    scalar(&tape, loss)?;
    let grads = tape.backward(loss)?;

    let mut work: Vec<Matrix> = inputs.to_vec();
    let mut worst = Vec::with_capacity(inputs.len());
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[k].shape());
        let mut max_err: f64 = 0.0;
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].as_slice()[idx];
            work[k].as_mut_slice()[idx] = orig + step;
            let plus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig - step;
            let minus = eval(&work)?;
            work[k].as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            max_err = max_err.max(relative_error(analytic.as_slice()[idx], numeric));
        }
        worst.push(max_err);
    }
    Ok(worst)
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    let m = tape.value(v);
    if m.shape() != (1, 1) {
        return Err(GlaError::NonScalarLoss {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(m.get(0, 0))
}
