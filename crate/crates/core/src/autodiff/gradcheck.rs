//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over every coordinate of `|analytic − numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    /// Same quantity restricted to each input tensor.
    pub per_input: Vec<f64>,
    pub analytic: Vec<Tensor>,
}

/// Compares the tape gradient of the scalar `f` against central differences
/// `(f(p+eps) − f(p−eps)) / 2eps` at every coordinate of every input.
///
/// `f` must be a pure function of its inputs (any randomness seeded inside).
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[i].data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_input,
        analytic,
    })
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(Error::invalid(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}
