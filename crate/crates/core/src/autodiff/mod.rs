//! Reverse-mode automatic differentiation.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, projection_weights, GradCheckReport, InputCheck};
pub(crate) use gradcheck::compare as compare_gradients;
pub use tape::{matmul_values, Pointwise, Tape, Var};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn matmul_examples() {
        let b = m(&[&[1.5, -2.0, 3.0], &[0.25, 4.0, -1.0]]);
        let mut t = Tape::new();
        let i = t.constant(Tensor::eye(2));
        let bv = t.constant(b.clone());
        let c = t.matmul(i, bv).unwrap();
        assert!(t.value(c).bitwise_eq(&b));

        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let ones = t.constant(m(&[&[1.0], &[1.0]]));
        let c = t.matmul(a, ones).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);

        let z = t.constant(Tensor::zeros(&[3, 3]));
        let any = t.constant(Tensor::full(&[3, 4], 2.5));
        let c = t.matmul(z, any).unwrap();
        assert_eq!(t.value(c).shape(), &[3, 4]);
        assert!(t.value(c).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(msg.contains("[2, 3] × [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[
            &[0.0, 0.0, 0.0],
            &[1000.0, 0.0, -5.0],
            &[1f64.ln(), 2f64.ln(), 3f64.ln()],
        ]));
        let y = t.softmax_rows(x).unwrap();
        let v = t.value(y);
        for j in 0..3 {
            assert!((v.at(0, j) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((v.at(1, 0) - 1.0).abs() < 1e-15 && v.at(1, 1) < 1e-300 + 1e-400);
        assert!(v.is_finite());
        for (j, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
            assert!((v.at(2, j) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(&[0.0, f64::NAN]));
        assert!(matches!(t.softmax_rows(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn pointwise_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(&[-1.0, 2.0]));
        let r = t.pointwise(Pointwise::Relu, a, None).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
        let z = t.constant(Tensor::scalar(0.0));
        let th = t.pointwise(Pointwise::Tanh, z, None).unwrap();
        assert_eq!(t.value(th).data(), &[0.0]);
        let x = t.constant(Tensor::vector(&[1.0, 2.0]));
        let b = t.constant(Tensor::vector(&[10.0, 10.0]));
        let s = t.pointwise(Pointwise::Add, x, Some(b)).unwrap();
        assert_eq!(t.value(s).data(), &[11.0, 12.0]);
        assert!(t.pointwise(Pointwise::Mul, x, None).is_err());
    }

    #[test]
    fn row_broadcast_and_rejection() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[3, 2]));
        let b = t.constant(Tensor::vector(&[1.0, 2.0]));
        let y = t.add(x, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let bad = t.constant(Tensor::vector(&[1.0, 2.0, 3.0]));
        assert!(matches!(t.add(x, bad), Err(Error::Dimension(_))));
        assert!(matches!(t.mul(x, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let g = t.constant(Tensor::full(&[2], 1.0));
        let b = t.constant(Tensor::zeros(&[2]));
        let x = t.constant(m(&[&[3.0, 3.0]]));
        let y = t.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        assert_eq!(t.value(y).row(0), &[0.0, 0.0]);
        let x = t.constant(m(&[&[1.0, -1.0]]));
        let y = t.layer_norm(x, g, b, 0.0).unwrap();
        assert_eq!(t.value(y).row(0), &[1.0, -1.0]);

        let g = t.constant(Tensor::full(&[4], 1.0));
        let b = t.constant(Tensor::vector(&[0.5, -1.0, 2.0, 0.7]));
        let x = t.constant(m(&[&[0.3, -2.0, 7.0, 1.0]]));
        let y = t.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        let mean: f64 = t.value(y).data().iter().sum::<f64>() / 4.0;
        assert!((mean - 0.55).abs() < 1e-12);

        let one = t.constant(Tensor::zeros(&[2, 1]));
        let g1 = t.constant(Tensor::full(&[1], 1.0));
        let b1 = t.constant(Tensor::zeros(&[1]));
        assert!(matches!(t.layer_norm(one, g1, b1, 1e-5), Err(Error::Dimension(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let uniform = t.constant(Tensor::zeros(&[1, 4]));
        let l = t.cross_entropy(uniform, &[2]).unwrap();
        assert!((t.value(l).data()[0] - 4f64.ln()).abs() < 1e-15);

        let sharp = t.constant(m(&[&[0.0, 800.0, 0.0]]));
        let l = t.cross_entropy(sharp, &[1]).unwrap();
        assert!(t.value(l).data()[0].abs() < 1e-300);

        let two = t.constant(m(&[&[0.0, 1.0], &[2.0, -1.0]]));
        let both = t.cross_entropy(two, &[0, 1]).unwrap();
        let r0 = t.constant(m(&[&[0.0, 1.0]]));
        let r1 = t.constant(m(&[&[2.0, -1.0]]));
        let l0 = t.cross_entropy(r0, &[0]).unwrap();
        let l1 = t.cross_entropy(r1, &[1]).unwrap();
        let mean = 0.5 * (t.value(l0).data()[0] + t.value(l1).data()[0]);
        assert!((t.value(both).data()[0] - mean).abs() < 1e-15);

        assert!(matches!(t.cross_entropy(uniform, &[4]), Err(Error::Index(_))));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut t = Tape::new();
        let logits = t.param(&m(&[&[0.2, -1.0, 0.5]]));
        let l = t.cross_entropy(logits, &[2]).unwrap();
        t.backward(l).unwrap();
        let g = t.grad(logits).unwrap();
        let e: Vec<f64> = [0.2f64, -1.0, 0.5].iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        let want = [e[0] / z, e[1] / z, e[2] / z - 1.0];
        for (a, b) in g.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_examples() {
        let w = Tensor::vector(&[1.0, -2.0, 0.5]);
        let mut t = Tape::new();
        let v = t.param(&w);
        let s = t.sum(v).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(v).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let v = t.param(&w);
        let sq = t.mul(v, v).unwrap();
        let s = t.sum(sq).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(v).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let v = t.param(&Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_visits_each_node_once() {
        let mut t = Tape::new();
        let a = t.param(&Tensor::vector(&[0.3, 0.1]));
        let b = t.tanh(a).unwrap();
        let c = t.mul(b, a).unwrap();
        let d = t.add(c, b).unwrap();
        let s = t.sum(d).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.last_backward_visits(), t.len());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(&[1.0, 2.0]));
        let p = t.param(&Tensor::vector(&[3.0, 4.0]));
        let y = t.mul(c, p).unwrap();
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(p).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn grad_check_dead_relu_agrees_exactly() {
        let x = Tensor::vector(&[-0.5, 0.7, -1.2, 0.3]);
        let report = grad_check(
            |t, v| {
                let r = t.relu(v[0])?;
                let sq = t.mul(r, r)?;
                t.sum(sq)
            },
            &[x.clone()],
            1e-6,
        );
        let c = &report.inputs[0];
        for j in [0, 2] {
            assert_eq!(c.analytic[j], 0.0);
            assert_eq!(c.numeric[j], 0.0);
        }
        assert!(report.passes(1e-5));
    }

    #[test]
    fn grad_check_reports_failures_instead_of_erroring() {
        let report = grad_check(
            |t, v| t.matmul(v[0], v[0]),
            &[Tensor::zeros(&[2, 3])],
            1e-6,
        );
        assert!(report.failure.is_some());
        assert!(!report.passes(1.0));
    }
}
