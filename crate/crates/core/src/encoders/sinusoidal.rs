//! Fixed sinusoidal encodings and the vector field whose flow reproduces them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ode::{DifferentiableField, VectorField};
use crate::tensor::Tensor;

/// Dimension and base constant of a sinusoidal table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalSpec {
    pub dim: usize,
    pub base: f64,
}

pub const DEFAULT_BASE: f64 = 1e-4;

impl SinusoidalSpec {
    pub fn new(dim: usize) -> Result<Self> {
        Self::with_base(dim, DEFAULT_BASE)
    }

    pub fn with_base(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::contract(format!(
                "sinusoidal dimension must be even and positive, got {dim}"
            )));
        }
        if !(base > 0.0 && base < 1.0) {
            return Err(Error::contract(format!("base must lie in (0, 1), got {base}")));
        }
        Ok(SinusoidalSpec { dim, base })
    }

    /// Angular frequency of column `j`: `c^{j/d}` for even `j`, shared with `j+1`.
    pub fn frequency(&self, j: usize) -> f64 {
        self.base.powf((j - j % 2) as f64 / self.dim as f64)
    }

    fn value(&self, pos: f64, j: usize) -> f64 {
        let w = self.frequency(j);
        if j % 2 == 0 {
            (pos * w).sin()
        } else {
            (pos * w).cos()
        }
    }
}

/// `len × d` table; row `i` (from 0) holds `sin(i·c^{j/d})` in even columns
/// and `cos(i·c^{(j−1)/d})` in odd ones.
pub fn sinusoidal(len: usize, spec: &SinusoidalSpec) -> Tensor {
    let d = spec.dim;
    let mut data = Vec::with_capacity(len * d);
    for i in 0..len {
        for j in 0..d {
            data.push(spec.value(i as f64, j));
        }
    }
    Tensor::new(&[len, d], data).expect("len × d")
}

/// Sinusoidal table plus the same pattern evaluated at the block index `block ≥ 1`.
pub fn sinusoidal_per_block(len: usize, spec: &SinusoidalSpec, block: usize) -> Result<Tensor> {
    if block == 0 {
        return Err(Error::Index("block indices start at 1".into()));
    }
    let mut t = sinusoidal(len, spec);
    let d = spec.dim;
    let shift: Vec<f64> = (0..d).map(|j| spec.value(block as f64, j)).collect();
    for (k, v) in t.data_mut().iter_mut().enumerate() {
        *v += shift[k % d];
    }
    Ok(t)
}

/// Exact time derivative of the sinusoidal table: `c^{j/d}·cos(τ·c^{j/d})`
/// in even columns, `−c^{(j−1)/d}·sin(τ·c^{(j−1)/d})` in odd ones.
pub fn sinusoidal_dynamics(tau: f64, spec: &SinusoidalSpec) -> Vec<f64> {
    (0..spec.dim)
        .map(|j| {
            let w = spec.frequency(j);
            if j % 2 == 0 {
                w * (tau * w).cos()
            } else {
                -w * (tau * w).sin()
            }
        })
        .collect()
}

/// [`sinusoidal_dynamics`] as a parameter-free vector field (ignores the state).
#[derive(Clone, Copy, Debug)]
pub struct SinusoidalField(pub SinusoidalSpec);

impl VectorField for SinusoidalField {
    fn dim(&self) -> usize {
        self.0.dim
    }

    fn eval(&self, t: f64, _p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&sinusoidal_dynamics(t, &self.0));
    }
}

impl DifferentiableField for SinusoidalField {
    fn num_params(&self) -> usize {
        0
    }

    fn params(&self) -> Vec<f64> {
        Vec::new()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.is_empty() {
            Ok(())
        } else {
            Err(Error::dim("sinusoidal field has no parameters"))
        }
    }

    fn vjp(&self, _t: f64, _p: &[f64], _a: &[f64], dp: &mut [f64], _dtheta: &mut [f64]) {
        dp.fill(0.0);
    }

    fn bind(&self, _tape: &mut Tape) -> Vec<Var> {
        Vec::new()
    }

    fn eval_on_tape(&self, tape: &mut Tape, _params: &[Var], t: f64, p: Var) -> Result<Var> {
        // Keep the state on the tape so the step stays differentiable in p.
        let zero = tape.scale(p, 0.0)?;
        let drift = tape.constant(Tensor::vector(&sinusoidal_dynamics(t, &self.0)));
        tape.add(zero, drift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize) -> SinusoidalSpec {
        SinusoidalSpec::new(d).unwrap()
    }

    #[test]
    fn first_rows() {
        let t = sinusoidal(3, &spec(6));
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((t.at(1, 0) - 0.841471).abs() < 1e-6);
        assert_eq!(t.at(1, 0), 1f64.sin());
        assert_eq!(t.at(1, 1), 1f64.cos());
    }

    #[test]
    fn entries_bounded() {
        let t = sinusoidal(200, &spec(16));
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        let b = sinusoidal_per_block(200, &spec(16), 3).unwrap();
        assert!(b.data().iter().all(|v| v.abs() <= 2.0));
    }

    #[test]
    fn per_block_examples() {
        let s = spec(8);
        let n = 3;
        let t = sinusoidal_per_block(6, &s, n).unwrap();
        for j in (0..8).step_by(2) {
            let w = s.frequency(j);
            assert_eq!(t.at(0, j), (n as f64 * w).sin());
            assert!((t.at(n, j) - 2.0 * (n as f64 * w).sin()).abs() < 1e-15);
        }
        let base = sinusoidal(6, &s);
        let last = sinusoidal(n + 1, &s);
        for i in 0..6 {
            for j in 0..8 {
                assert_eq!(t.at(i, j), base.at(i, j) + last.at(n, j));
            }
        }
        assert!(sinusoidal_per_block(4, &s, 0).is_err());
    }

    #[test]
    fn dynamics_at_origin_and_state_independence() {
        let s = spec(8);
        let v = sinusoidal_dynamics(0.0, &s);
        for j in 0..8 {
            if j % 2 == 0 {
                assert_eq!(v[j], s.frequency(j));
            } else {
                assert_eq!(v[j], 0.0);
            }
        }
        let f = SinusoidalField(s);
        let mut a = [0.0; 8];
        let mut b = [0.0; 8];
        f.eval(1.3, &[0.0; 8], &mut a);
        f.eval(1.3, &[5.0, -1.0, 2.0, 0.1, 9.0, 3.0, -4.0, 8.0], &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn spec_validation() {
        assert!(SinusoidalSpec::new(7).is_err());
        assert!(SinusoidalSpec::with_base(8, 1.5).is_err());
        assert!(SinusoidalSpec::with_base(8, 0.0).is_err());
    }
}
