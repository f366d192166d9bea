//! Fixed-step explicit Runge–Kutta integration.

use serde::{Deserialize, Serialize};

use super::field::{DifferentiableField, VectorField};
use super::grid::TimeGrid;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Midpoint,
    Rk4,
}

impl Scheme {
    pub fn order(self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint => 2,
            Scheme::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Midpoint => "midpoint",
            Scheme::Rk4 => "rk4",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "midpoint" => Ok(Scheme::Midpoint),
            "rk4" => Ok(Scheme::Rk4),
            _ => Err(Error::Parse(format!("unknown solver scheme {s:?}"))),
        }
    }
}

/// How gradients flow back through the integrator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradMode {
    /// Integrate the adjoint system backward in time.
    Adjoint,
    /// Differentiate the recorded discrete solver steps.
    Unrolled,
}

impl std::str::FromStr for GradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint" => Ok(GradMode::Adjoint),
            "unrolled" => Ok(GradMode::Unrolled),
            _ => Err(Error::Parse(format!("unknown gradient mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Equal substeps per grid interval.
    pub substeps: usize,
    pub grad_mode: GradMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            scheme: Scheme::Rk4,
            substeps: 5,
            grad_mode: GradMode::Adjoint,
        }
    }
}

impl SolverConfig {
    pub fn new(scheme: Scheme, substeps: usize, grad_mode: GradMode) -> Result<Self> {
        let cfg = SolverConfig {
            scheme,
            substeps,
            grad_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::contract("substeps must be at least 1"));
        }
        Ok(())
    }
}

/// One explicit step of `scheme` for `y' = f(t, y)`.
pub(crate) fn rk_step<F>(scheme: Scheme, f: &mut F, t: f64, y: &[f64], dt: f64) -> Vec<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let axpy = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, k)| b + s * k).collect()
    };
    let mut k1 = vec![0.0; n];
    f(t, y, &mut k1);
    match scheme {
        Scheme::Euler => axpy(y, &k1, dt),
        Scheme::Midpoint => {
            let mid = axpy(y, &k1, 0.5 * dt);
            let mut k2 = vec![0.0; n];
            f(t + 0.5 * dt, &mid, &mut k2);
            axpy(y, &k2, dt)
        }
        Scheme::Rk4 => {
            let mut k2 = vec![0.0; n];
            let mut k3 = vec![0.0; n];
            let mut k4 = vec![0.0; n];
            f(t + 0.5 * dt, &axpy(y, &k1, 0.5 * dt), &mut k2);
            f(t + 0.5 * dt, &axpy(y, &k2, 0.5 * dt), &mut k3);
            f(t + dt, &axpy(y, &k3, dt), &mut k4);
            (0..n)
                .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    }
}

/// The same step recorded on a tape, for the unrolled backward route.
pub(crate) fn rk_step_on_tape<F: DifferentiableField + ?Sized>(
    h: &F,
    tape: &mut Tape,
    params: &[Var],
    scheme: Scheme,
    t: f64,
    y: Var,
    dt: f64,
) -> Result<Var> {
    let k1 = h.eval_on_tape(tape, params, t, y)?;
    let axpy = |tape: &mut Tape, k: Var, s: f64| -> Result<Var> {
        let sk = tape.scale(k, s)?;
        tape.add(y, sk)
    };
    match scheme {
        Scheme::Euler => axpy(tape, k1, dt),
        Scheme::Midpoint => {
            let mid = axpy(tape, k1, 0.5 * dt)?;
            let k2 = h.eval_on_tape(tape, params, t + 0.5 * dt, mid)?;
            axpy(tape, k2, dt)
        }
        Scheme::Rk4 => {
            let y2 = axpy(tape, k1, 0.5 * dt)?;
            let k2 = h.eval_on_tape(tape, params, t + 0.5 * dt, y2)?;
            let y3 = axpy(tape, k2, 0.5 * dt)?;
            let k3 = h.eval_on_tape(tape, params, t + 0.5 * dt, y3)?;
            let y4 = axpy(tape, k3, dt)?;
            let k4 = h.eval_on_tape(tape, params, t + dt, y4)?;
            let k2x2 = tape.scale(k2, 2.0)?;
            let k3x2 = tape.scale(k3, 2.0)?;
            let s = tape.add(k1, k2x2)?;
            let s = tape.add(s, k3x2)?;
            let s = tape.add(s, k4)?;
            axpy(tape, s, dt / 6.0)
        }
    }
}

fn integrate_recorded<F: VectorField + ?Sized>(
    h: &F,
    p_s: &[f64],
    s: f64,
    t: f64,
    cfg: &SolverConfig,
    mut record: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let n = cfg.substeps;
    let dt = (t - s) / n as f64;
    let mut f = |tau: f64, y: &[f64], out: &mut [f64]| h.eval(tau, y, out);
    let mut p = p_s.to_vec();
    for k in 0..n {
        if let Some(rec) = record.as_deref_mut() {
            rec.push(p.clone());
        }
        let tau = s + k as f64 * dt;
        p = rk_step(cfg.scheme, &mut f, tau, &p, dt);
        if let Some(i) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "state component {i} became non-finite at substep {} of {n} (τ = {tau}, segment [{s}, {t}])",
                k + 1
            )));
        }
    }
    Ok(p)
}

/// Approximates `p(t) = p(s) + ∫ₛᵗ h(τ, p(τ)) dτ` with `cfg.substeps` equal steps.
pub fn integrate_segment<F: VectorField + ?Sized>(
    h: &F,
    p_s: &[f64],
    s: f64,
    t: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(s < t) {
        return Err(Error::contract(format!("segment needs s < t, got [{s}, {t}]")));
    }
    if p_s.len() != h.dim() {
        return Err(Error::dim(format!(
            "state has {} components, field expects {}",
            p_s.len(),
            h.dim()
        )));
    }
    if p_s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("initial state is not finite".into()));
    }
    integrate_recorded(h, p_s, s, t, cfg, None)
}

/// States `p(t_0), p(t_1), …, p(t_L)` and, for unrolled gradients, the
/// state at the start of every substep.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    states: Vec<Vec<f64>>,
    substeps: Option<Vec<Vec<Vec<f64>>>>,
}

impl Trajectory {
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    /// `p(t_i)`; index 0 is the initial vector.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Number of grid points (excludes the origin).
    pub fn len(&self) -> usize {
        self.states.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Substep start states of segment `i` (1-based), if recorded.
    pub fn substep_states(&self, i: usize) -> Option<&[Vec<f64>]> {
        self.substeps.as_ref().map(|s| s[i - 1].as_slice())
    }

    pub fn has_substeps(&self) -> bool {
        self.substeps.is_some()
    }

    /// The trajectory over the first `k` grid points.
    pub fn prefix(&self, k: usize) -> Trajectory {
        let k = k.min(self.len());
        Trajectory {
            states: self.states[..=k].to_vec(),
            substeps: self.substeps.as_ref().map(|s| s[..k].to_vec()),
        }
    }

    /// `L × d` matrix of `p(t_1) … p(t_L)`.
    pub fn grid_states(&self) -> crate::tensor::Tensor {
        let d = self.dim();
        let data = self.states[1..].iter().flatten().copied().collect();
        crate::tensor::Tensor::new(&[self.len(), d], data).expect("consistent trajectory")
    }
}

/// Chains [`integrate_segment`] over consecutive grid intervals from `p(0) = p0`.
pub fn encode_positions<F: VectorField + ?Sized>(
    h: &F,
    p0: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if p0.len() != h.dim() {
        return Err(Error::dim(format!(
            "initial vector has {} components, field expects {}",
            p0.len(),
            h.dim()
        )));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("initial vector is not finite".into()));
    }
    let record = cfg.grad_mode == GradMode::Unrolled;
    let mut states = Vec::with_capacity(grid.len() + 1);
    let mut subs = record.then(|| Vec::with_capacity(grid.len()));
    states.push(p0.to_vec());
    for i in 1..=grid.len() {
        let (s, t) = grid.segment(i);
        let prev = &states[i - 1];
        let mut seg = Vec::new();
        let next = if s < t {
            integrate_recorded(h, prev, s, t, cfg, record.then_some(&mut seg))?
        } else {
            prev.clone()
        };
        if let Some(subs) = subs.as_mut() {
            subs.push(seg);
        }
        states.push(next);
    }
    Ok(Trajectory {
        states,
        substeps: subs,
    })
}
