//! Vector fields driving position trajectories.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A time-dependent vector field `h(τ, p)` on `ℝᵈ`.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Writes `h(t, p)` into `out`.
    fn eval(&self, t: f64, p: &[f64], out: &mut [f64]);
}

/// A vector field with trainable parameters and the derivatives needed by
/// both backward routes.
///
/// Parameters are exposed as one flat vector whose layout is fixed by the
/// implementor.
pub trait DifferentiableField: VectorField {
    fn num_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, flat: &[f64]) -> Result<()>;

    /// Vector-Jacobian products at `(t, p)` with cotangent `a`:
    /// writes `aᵀ ∂h/∂p` into `dp` and `aᵀ ∂h/∂θ` into `dtheta`.
    fn vjp(&self, t: f64, p: &[f64], a: &[f64], dp: &mut [f64], dtheta: &mut [f64]);

    /// Records the parameters as gradient-tracked leaves on `tape`, in
    /// the same order as [`DifferentiableField::params`].
    fn bind(&self, tape: &mut Tape) -> Vec<Var>;

    /// Evaluates the field on the tape for a `1 × d` state.
    fn eval_on_tape(&self, tape: &mut Tape, params: &[Var], t: f64, p: Var) -> Result<Var>;

    /// Flattens per-parameter tape gradients into the layout of
    /// [`DifferentiableField::params`].
    fn collect_grads(&self, tape: &Tape, params: &[Var], out: &mut [f64]) {
        let mut offset = 0;
        for &v in params {
            let n = tape.value(v).len();
            if let Some(g) = tape.grad_data(v) {
                out[offset..offset + n]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, x)| *o += x);
            }
            offset += n;
        }
    }
}

/// Two-layer perceptron over the state concatenated with time:
/// `h(τ, p) = tanh([p, τ]·W_a + b_a)·W_b + b_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsFunction {
    pub w_a: Tensor,
    pub b_a: Tensor,
    pub w_b: Tensor,
    pub b_b: Tensor,
}

impl DynamicsFunction {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        DynamicsFunction {
            w_a: Tensor::zeros(&[dim + 1, hidden]),
            b_a: Tensor::zeros(&[hidden]),
            w_b: Tensor::zeros(&[hidden, dim]),
            b_b: Tensor::zeros(&[dim]),
        }
    }

    /// Every weight and bias drawn from `N(0, std²)`.
    pub fn random<R: Rng + ?Sized>(dim: usize, hidden: usize, std: f64, rng: &mut R) -> Self {
        DynamicsFunction {
            w_a: Tensor::randn(&[dim + 1, hidden], std, rng),
            b_a: Tensor::randn(&[hidden], std, rng),
            w_b: Tensor::randn(&[hidden, dim], std, rng),
            b_b: Tensor::randn(&[dim], std, rng),
        }
    }

    pub fn from_parts(w_a: Tensor, b_a: Tensor, w_b: Tensor, b_b: Tensor) -> Result<Self> {
        let (din, hidden) = w_a.dims2();
        let dim = din.checked_sub(1).ok_or_else(|| Error::dim("W_a needs d+1 rows"))?;
        if b_a.len() != hidden || w_b.dims2() != (hidden, dim) || b_b.len() != dim {
            return Err(Error::dim(format!(
                "inconsistent dynamics shapes: W_a {:?}, b_a {:?}, W_b {:?}, b_b {:?}",
                w_a.shape(),
                b_a.shape(),
                w_b.shape(),
                b_b.shape()
            )));
        }
        Ok(DynamicsFunction { w_a, b_a, w_b, b_b })
    }

    pub fn hidden(&self) -> usize {
        self.b_a.len()
    }

    /// `(d+1)·H + H + H·d + d`.
    pub fn param_count(dim: usize, hidden: usize) -> usize {
        (dim + 1) * hidden + hidden + hidden * dim + dim
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_a, &self.b_a, &self.w_b, &self.b_b]
    }

    fn hidden_activation(&self, t: f64, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let h = self.hidden();
        let wa = self.w_a.data();
        let mut z = self.b_a.data().to_vec();
        for (i, &x) in p.iter().chain(std::iter::once(&t)).enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &wa[i * h..(i + 1) * h];
            z.iter_mut().zip(row).for_each(|(zk, w)| *zk += x * w);
        }
        debug_assert_eq!(p.len(), d);
        z.iter_mut().for_each(|v| *v = v.tanh());
        z
    }
}

impl VectorField for DynamicsFunction {
    fn dim(&self) -> usize {
        self.b_b.len()
    }

    fn eval(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let u = self.hidden_activation(t, p);
        let wb = self.w_b.data();
        out.copy_from_slice(self.b_b.data());
        for (k, &uk) in u.iter().enumerate() {
            let row = &wb[k * d..(k + 1) * d];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += uk * w);
        }
    }
}

impl DifferentiableField for DynamicsFunction {
    fn num_params(&self) -> usize {
        Self::param_count(self.dim(), self.hidden())
    }

    fn params(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(format!(
                "expected {} dynamics parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in [&mut self.w_a, &mut self.b_a, &mut self.w_b, &mut self.b_b] {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn vjp(&self, t: f64, p: &[f64], a: &[f64], dp: &mut [f64], dtheta: &mut [f64]) {
        let d = self.dim();
        let h = self.hidden();
        let u = self.hidden_activation(t, p);
        let wa = self.w_a.data();
        let wb = self.w_b.data();

        let (g_wa, rest) = dtheta.split_at_mut((d + 1) * h);
        let (g_ba, rest) = rest.split_at_mut(h);
        let (g_wb, g_bb) = rest.split_at_mut(h * d);

        g_bb.copy_from_slice(a);
        let mut dz = vec![0.0; h];
        for k in 0..h {
            let row = &wb[k * d..(k + 1) * d];
            let mut du = 0.0;
            for j in 0..d {
                g_wb[k * d + j] = u[k] * a[j];
                du += row[j] * a[j];
            }
            dz[k] = du * (1.0 - u[k] * u[k]);
        }
        g_ba.copy_from_slice(&dz);
        for (i, &x) in p.iter().chain(std::iter::once(&t)).enumerate() {
            let row = &wa[i * h..(i + 1) * h];
            for k in 0..h {
                g_wa[i * h + k] = x * dz[k];
            }
            if i < d {
                dp[i] = row.iter().zip(&dz).map(|(w, z)| w * z).sum();
            }
        }
    }

    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors().iter().map(|t| tape.param(t)).collect()
    }

    fn eval_on_tape(&self, tape: &mut Tape, params: &[Var], t: f64, p: Var) -> Result<Var> {
        let time = tape.constant(Tensor::full(&[1, 1], t));
        let input = tape.concat_cols(&[p, time])?;
        let z = tape.matmul(input, params[0])?;
        let z = tape.add(z, params[1])?;
        let u = tape.tanh(z)?;
        let out = tape.matmul(u, params[2])?;
        tape.add(out, params[3])
    }
}

/// `h(τ, p) = A·p`, a linear test field.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    pub a: Tensor,
}

impl LinearField {
    pub fn new(a: Tensor) -> Result<Self> {
        let (r, c) = a.dims2();
        if r != c {
            return Err(Error::dim(format!("linear field needs a square matrix, got {:?}", a.shape())));
        }
        Ok(LinearField { a })
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn eval(&self, _t: f64, p: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.a.data()[i * d..(i + 1) * d]
                .iter()
                .zip(p)
                .map(|(x, y)| x * y)
                .sum();
        }
    }
}

impl DifferentiableField for LinearField {
    fn num_params(&self) -> usize {
        self.a.len()
    }

    fn params(&self) -> Vec<f64> {
        self.a.data().to_vec()
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.a.len() {
            return Err(Error::dim("linear field parameter count"));
        }
        self.a.data_mut().copy_from_slice(flat);
        Ok(())
    }

    fn vjp(&self, _t: f64, p: &[f64], a: &[f64], dp: &mut [f64], dtheta: &mut [f64]) {
        let d = self.dim();
        let m = self.a.data();
        for j in 0..d {
            dp[j] = (0..d).map(|i| a[i] * m[i * d + j]).sum();
        }
        for i in 0..d {
            for j in 0..d {
                dtheta[i * d + j] = a[i] * p[j];
            }
        }
    }

    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        vec![tape.param(&self.a)]
    }

    fn eval_on_tape(&self, tape: &mut Tape, params: &[Var], _t: f64, p: Var) -> Result<Var> {
        let at = tape.transpose(params[0])?;
        tape.matmul(p, at)
    }
}

/// Field defined by a plain closure; no parameters, not differentiable.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, p: &[f64], out: &mut [f64]) {
        (self.f)(t, p, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_direct_evaluation_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = DynamicsFunction::random(4, 8, 0.5, &mut rng);
        let p = [0.3, -0.2, 0.9, 0.1];
        let mut direct = [0.0; 4];
        h.eval(0.7, &p, &mut direct);
        let mut tape = Tape::new();
        let params = h.bind(&mut tape);
        let pv = tape.constant(Tensor::vector(&p));
        let out = h.eval_on_tape(&mut tape, &params, 0.7, pv).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn vjp_matches_tape_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = DynamicsFunction::random(3, 6, 0.7, &mut rng);
        let p = [0.4, -1.1, 0.25];
        let a = [1.0, -0.5, 2.0];
        let mut dp = [0.0; 3];
        let mut dth = vec![0.0; h.num_params()];
        h.vjp(0.3, &p, &a, &mut dp, &mut dth);

        let mut tape = Tape::new();
        let params = h.bind(&mut tape);
        let pv = tape.param(&Tensor::vector(&p));
        let out = h.eval_on_tape(&mut tape, &params, 0.3, pv).unwrap();
        let w = tape.constant(Tensor::vector(&a));
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        let mut want = vec![0.0; h.num_params()];
        h.collect_grads(&tape, &params, &mut want);
        for (x, y) in dth.iter().zip(&want) {
            assert!((x - y).abs() < 1e-13);
        }
        for (x, y) in dp.iter().zip(tape.grad_data(pv).unwrap()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn param_roundtrip_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = DynamicsFunction::random(5, 10, 1.0, &mut rng);
        assert_eq!(h.num_params(), 6 * 10 + 10 + 50 + 5);
        let mut z = DynamicsFunction::zeros(5, 10);
        z.set_params(&h.params()).unwrap();
        assert_eq!(z, h);
        assert!(z.set_params(&[0.0; 3]).is_err());
    }
}
