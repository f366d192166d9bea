//! Reverse-mode vs central finite differences.

use std::fmt;

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Agreement between analytic and numeric gradients for one input.
#[derive(Clone, Debug)]
pub struct InputCheck {
    pub index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)`, 0 when both vanish.
    pub rel_err: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    /// Set when the function itself failed; the report is then empty.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        if self.failure.is_some() {
            return f64::INFINITY;
        }
        self.inputs.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.failure.is_none() && self.max_rel_err() <= tol
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(msg) = &self.failure {
            return write!(f, "failed: {msg}");
        }
        for c in &self.inputs {
            writeln!(
                f,
                "  input {}: rel_err = {:.3e}, abs_err = {:.3e}",
                c.index, c.rel_err, c.abs_err
            )?;
        }
        Ok(())
    }
}

/// Fixed, non-uniform projection weights. A plain sum would hide errors in
/// outputs with a conserved total (softmax rows, normalized features).
pub fn projection_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let j = j as f64;
            (1.7 * j + 0.3).sin() + 0.5 * (0.9 * j).cos()
        })
        .collect()
}

fn scalarize(tape: &mut Tape, out: Var) -> Result<Var> {
    if tape.value(out).len() == 1 {
        return Ok(out);
    }
    let shape = tape.value(out).shape().to_vec();
    let w = Tensor::new(&shape, projection_weights(tape.value(out).len()))?;
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let s = scalarize(&mut tape, out)?;
    Ok(tape.value(s).data()[0])
}

fn run<F>(f: &F, inputs: &[Tensor], eps: f64) -> Result<Vec<InputCheck>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out)?;
    tape.backward(loss)?;

    let mut checks = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad_data(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe[k].data()[j];
            probe[k].data_mut()[j] = orig + eps;
            let plus = evaluate(f, &probe)?;
            probe[k].data_mut()[j] = orig - eps;
            let minus = evaluate(f, &probe)?;
            probe[k].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        checks.push(compare(k, analytic, numeric));
    }
    Ok(checks)
}

pub(crate) fn compare(index: usize, analytic: Vec<f64>, numeric: Vec<f64>) -> InputCheck {
    let abs_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(&numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    let rel_err = if scale == 0.0 { 0.0 } else { abs_err / scale };
    InputCheck {
        index,
        analytic,
        numeric,
        rel_err,
        abs_err,
    }
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `eps`, for every input. Non-scalar outputs are contracted with
/// [`projection_weights`] first.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    match run(&f, inputs, eps) {
        Ok(inputs) => GradCheckReport {
            inputs,
            failure: None,
        },
        Err(e) => GradCheckReport {
            inputs: Vec::new(),
            failure: Some(e.to_string()),
        },
    }
}
