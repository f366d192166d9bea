//! Gradients of trajectory losses with respect to the field parameters and
//! the initial vector.
//!
//! Both routes take the loss cotangents `∂L/∂p(t_i)` for every grid point
//! `t_1 … t_L` and sweep the segments from last to first. Between segments
//! the adjoint picks up the cotangent of the grid point it passes:
//! `a ← a + ∂L/∂p(t_i)`.
//!
//! * [`adjoint_backward`] integrates the continuous adjoint system
//!   `da/dτ = −aᵀ ∂h/∂p`, `dg/dτ = −aᵀ ∂h/∂θ` backward in time together
//!   with the state itself, restarting the state from the stored grid
//!   value at every segment.
//! * [`unrolled_backward`] replays each recorded solver substep on a tape
//!   and back-propagates through it, which yields the exact gradient of
//!   the discrete integrator.

use super::field::DifferentiableField;
use super::grid::TimeGrid;
use super::solver::{rk_step, rk_step_on_tape, SolverConfig, Trajectory};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `∂L/∂θ` (in the field's flat parameter layout) and `∂L/∂p(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGradient {
    pub params: Vec<f64>,
    pub initial: Vec<f64>,
}

fn check_inputs<F: DifferentiableField + ?Sized>(
    h: &F,
    traj: &Trajectory,
    grid: &TimeGrid,
    dl_dp: &[Vec<f64>],
) -> Result<()> {
    if traj.len() != grid.len() {
        return Err(Error::contract(format!(
            "trajectory has {} grid states but the grid has {} points",
            traj.len(),
            grid.len()
        )));
    }
    if dl_dp.len() != grid.len() {
        return Err(Error::contract(format!(
            "{} cotangents supplied for {} grid points",
            dl_dp.len(),
            grid.len()
        )));
    }
    let d = h.dim();
    if traj.dim() != d || dl_dp.iter().any(|g| g.len() != d) {
        return Err(Error::dim(format!("cotangents and states must have {d} components")));
    }
    Ok(())
}

/// Continuous adjoint route.
pub fn adjoint_backward<F: DifferentiableField + ?Sized>(
    h: &F,
    traj: &Trajectory,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    dl_dp: &[Vec<f64>],
) -> Result<FieldGradient> {
    cfg.validate()?;
    check_inputs(h, traj, grid, dl_dp)?;
    let d = h.dim();
    let np = h.num_params();

    // Augmented state: [p | a | g].
    let mut a = vec![0.0; d];
    let mut g = vec![0.0; np];
    let mut dp = vec![0.0; d];
    let mut dth = vec![0.0; np];
    let mut field = |tau: f64, y: &[f64], out: &mut [f64]| {
        let (p, rest) = y.split_at(d);
        let adj = &rest[..d];
        let (op, orest) = out.split_at_mut(d);
        let (oa, og) = orest.split_at_mut(d);
        h.eval(tau, p, op);
        h.vjp(tau, p, adj, &mut dp, &mut dth);
        oa.iter_mut().zip(&dp).for_each(|(o, v)| *o = -v);
        og.iter_mut().zip(&dth).for_each(|(o, v)| *o = -v);
    };

    for i in (1..=grid.len()).rev() {
        a.iter_mut().zip(&dl_dp[i - 1]).for_each(|(x, y)| *x += y);
        let (s, t) = grid.segment(i);
        if !(s < t) {
            continue;
        }
        let mut y = Vec::with_capacity(2 * d + np);
        y.extend_from_slice(traj.state(i));
        y.extend_from_slice(&a);
        y.extend_from_slice(&g);
        let n = cfg.substeps;
        let dt = -(t - s) / n as f64;
        for k in 0..n {
            let tau = t + k as f64 * dt;
            y = rk_step(cfg.scheme, &mut field, tau, &y, dt);
        }
        if let Some(j) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "adjoint state component {j} became non-finite on segment {i}"
            )));
        }
        a.copy_from_slice(&y[d..2 * d]);
        g.copy_from_slice(&y[2 * d..]);
    }
    Ok(FieldGradient {
        params: g,
        initial: a,
    })
}

/// Discrete (unrolled) route. Needs a trajectory recorded with
/// [`GradMode::Unrolled`](super::GradMode::Unrolled).
pub fn unrolled_backward<F: DifferentiableField + ?Sized>(
    h: &F,
    traj: &Trajectory,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    dl_dp: &[Vec<f64>],
) -> Result<FieldGradient> {
    cfg.validate()?;
    check_inputs(h, traj, grid, dl_dp)?;
    if !traj.has_substeps() {
        return Err(Error::contract(
            "unrolled backward needs a trajectory with recorded substep states",
        ));
    }
    let d = h.dim();
    let mut a = vec![0.0; d];
    let mut g = vec![0.0; h.num_params()];

    for i in (1..=grid.len()).rev() {
        a.iter_mut().zip(&dl_dp[i - 1]).for_each(|(x, y)| *x += y);
        let (s, t) = grid.segment(i);
        let subs = traj.substep_states(i).expect("checked above");
        if !(s < t) {
            continue;
        }
        if subs.len() != cfg.substeps {
            return Err(Error::contract(format!(
                "segment {i} recorded {} substeps, config expects {}",
                subs.len(),
                cfg.substeps
            )));
        }
        let dt = (t - s) / cfg.substeps as f64;
        for k in (0..cfg.substeps).rev() {
            let tau = s + k as f64 * dt;
            let mut tape = Tape::new();
            let params = h.bind(&mut tape);
            let y = tape.param(&Tensor::vector(&subs[k]));
            let next = rk_step_on_tape(h, &mut tape, &params, cfg.scheme, tau, y, dt)?;
            let w = tape.constant(Tensor::vector(&a));
            let prod = tape.mul(next, w)?;
            let loss = tape.sum(prod)?;
            tape.backward(loss)?;
            h.collect_grads(&tape, &params, &mut g);
            a.copy_from_slice(tape.grad_data(y).expect("state leaf requires grad"));
        }
    }
    Ok(FieldGradient {
        params: g,
        initial: a,
    })
}

/// Dispatches on `cfg.grad_mode`.
pub fn backward<F: DifferentiableField + ?Sized>(
    h: &F,
    traj: &Trajectory,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    dl_dp: &[Vec<f64>],
) -> Result<FieldGradient> {
    match cfg.grad_mode {
        super::GradMode::Adjoint => adjoint_backward(h, traj, grid, cfg, dl_dp),
        super::GradMode::Unrolled => unrolled_backward(h, traj, grid, cfg, dl_dp),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{encode_positions, DynamicsFunction, GradMode, Scheme};

    #[test]
    fn zero_field_transports_adjoint_unchanged() {
        let h = DynamicsFunction::zeros(3, 4);
        let grid = TimeGrid::equidistant(4, 0.1).unwrap();
        let dl: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 1.0, -0.5 * i as f64]).collect();
        let sum: Vec<f64> = (0..3).map(|j| dl.iter().map(|v| v[j]).sum()).collect();
        for mode in [GradMode::Adjoint, GradMode::Unrolled] {
            let cfg = SolverConfig::new(Scheme::Rk4, 5, mode).unwrap();
            let traj = encode_positions(&h, &[0.0; 3], &grid, &cfg).unwrap();
            let g = backward(&h, &traj, &grid, &cfg, &dl).unwrap();
            for (x, y) in g.initial.iter().zip(&sum) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_cotangents_give_zero_gradients() {
        let h = DynamicsFunction {
            b_b: Tensor::vector(&[0.1, -0.2]),
            ..DynamicsFunction::zeros(2, 3)
        };
        let grid = TimeGrid::equidistant(3, 0.2).unwrap();
        let dl = vec![vec![0.0; 2]; 3];
        for mode in [GradMode::Adjoint, GradMode::Unrolled] {
            let cfg = SolverConfig::new(Scheme::Midpoint, 3, mode).unwrap();
            let traj = encode_positions(&h, &[0.5, 0.5], &grid, &cfg).unwrap();
            let g = backward(&h, &traj, &grid, &cfg, &dl).unwrap();
            assert!(g.params.iter().chain(&g.initial).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mismatched_inputs_are_contract_errors() {
        let h = DynamicsFunction::zeros(2, 2);
        let grid = TimeGrid::equidistant(3, 0.1).unwrap();
        let cfg = SolverConfig::default();
        let traj = encode_positions(&h, &[0.0; 2], &grid, &cfg).unwrap();
        let short = TimeGrid::equidistant(2, 0.1).unwrap();
        let dl = vec![vec![0.0; 2]; 3];
        assert!(matches!(
            adjoint_backward(&h, &traj, &short, &cfg, &dl),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            adjoint_backward(&h, &traj, &grid, &cfg, &dl[..2]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            unrolled_backward(&h, &traj, &grid, &cfg, &dl),
            Err(Error::Contract(_))
        ));
    }
}
