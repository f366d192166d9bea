//! Gradient and equivalence reports behind the `gradcheck` and
//! `equivalence` commands.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{compare_gradients, grad_check, GradCheckReport, Tape, Var, LAYER_NORM_EPS};
use crate::encoders::{
    sinusoidal, EncoderConfig, EncoderKind, Injection, SinusoidalField, SinusoidalSpec,
};
use crate::error::Result;
use crate::model::{EncoderModel, Example, ModelConfig};
use crate::ode::{
    encode_positions, integrate_segment, DifferentiableField, DynamicsFunction, GradMode, LinearField, Scheme,
    SolverConfig, TimeGrid,
};
use crate::params::ParamGroup;
use crate::seed::derive;
use crate::tensor::Tensor;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-6;

/// Shapes every primitive is checked on.
pub const SHAPES: [(usize, usize); 5] = [(1, 1), (1, 5), (3, 4), (4, 3), (6, 7)];

pub struct OpCheck {
    pub op: &'static str,
    pub shape: (usize, usize),
    pub report: GradCheckReport,
}

fn rand_t(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    Tensor::randn(&[m, n], 1.0, rng)
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// The checked function and its inputs for primitive `op` at shape `m × n`.
fn op_case(op: &str, m: usize, n: usize, rng: &mut ChaCha8Rng) -> (OpFn, Vec<Tensor>) {
    let x = rand_t(rng, m, n);
    match op {
        "matmul" => {
            let k = n + 1;
            (Box::new(|t, v| t.matmul(v[0], v[1])), vec![x, rand_t(rng, n, k)])
        }
        "add" => (Box::new(|t, v| t.add(v[0], v[1])), vec![x, rand_t(rng, m, n)]),
        "add_row_bias" => (Box::new(|t, v| t.add(v[0], v[1])), vec![x, Tensor::randn(&[n], 1.0, rng)]),
        "mul" => (Box::new(|t, v| t.mul(v[0], v[1])), vec![x, rand_t(rng, m, n)]),
        "mul_row" => (Box::new(|t, v| t.mul(v[0], v[1])), vec![x, Tensor::randn(&[n], 1.0, rng)]),
        "scale" => (Box::new(|t, v| t.scale(v[0], -1.7)), vec![x]),
        "relu" => (Box::new(|t, v| t.relu(v[0])), vec![x]),
        "tanh" => (Box::new(|t, v| t.tanh(v[0])), vec![x]),
        "softmax_rows" => (Box::new(|t, v| t.softmax_rows(v[0])), vec![x]),
        "layer_norm" => {
            // One column has no variance; with two the output is ±1 up to
            // eps and the input gradient vanishes, leaving only FD noise.
            let n = n.max(3);
            let x = rand_t(rng, m, n);
            (
                Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS)),
                vec![x, Tensor::randn(&[n], 1.0, rng), Tensor::randn(&[n], 1.0, rng)],
            )
        }
        "cross_entropy" => {
            let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
            (Box::new(move |t, v| t.cross_entropy(v[0], &targets)), vec![x])
        }
        "sum" => (Box::new(|t, v| t.sum(v[0])), vec![x]),
        "transpose" => (Box::new(|t, v| t.transpose(v[0])), vec![x]),
        "slice_cols" => {
            let start = n / 3;
            let len = (n - start).div_ceil(2);
            (Box::new(move |t, v| t.slice_cols(v[0], start, len)), vec![x])
        }
        "concat_cols" => (Box::new(|t, v| t.concat_cols(&[v[0], v[1]])), vec![x, rand_t(rng, m, 2)]),
        "concat_rows" => (Box::new(|t, v| t.concat_rows(&[v[0], v[1]])), vec![x, rand_t(rng, 2, n)]),
        "gather_rows" => {
            let idx: Vec<usize> = (0..m + 2).map(|i| (i * 7 + 1) % m).collect();
            (Box::new(move |t, v| t.gather_rows(v[0], &idx)), vec![x])
        }
        _ => unreachable!("unknown op {op}"),
    }
}

pub const OPS: [&str; 17] = [
    "matmul",
    "add",
    "add_row_bias",
    "mul",
    "mul_row",
    "scale",
    "relu",
    "tanh",
    "softmax_rows",
    "layer_norm",
    "cross_entropy",
    "sum",
    "transpose",
    "slice_cols",
    "concat_cols",
    "concat_rows",
    "gather_rows",
];

/// Every primitive on every shape in [`SHAPES`], random inputs from `seed`.
pub fn op_checks(seed: u64) -> Vec<OpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for op in OPS {
        for &(m, n) in &SHAPES {
            let (f, inputs) = op_case(op, m, n, &mut rng);
            out.push(OpCheck {
                op,
                shape: (m, n),
                report: grad_check(f, &inputs, FD_EPS),
            });
        }
    }
    out
}

/// Agreement for one parameter group (or one tensor).
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// Whole parameter group rather than a single tensor.
    pub aggregate: bool,
    pub group: ParamGroup,
    pub count: usize,
    pub rel_err: f64,
    pub abs_err: f64,
}

/// Full-model gradients against central differences of the batch loss,
/// summarized per group (first) and per tensor (after).
pub fn model_grad_check(model: &mut EncoderModel, batch: &[Example], eps: f64) -> Result<Vec<ParamCheck>> {
    model.store.zero_grad();
    model.loss_and_grad(batch, true)?;
    let ids: Vec<_> = model.store.ids().collect();
    let mut per_tensor = Vec::new();
    for &id in &ids {
        let t = model.store.get(id);
        let analytic = t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec);
        let mut numeric = vec![0.0; t.len()];
        for (k, nk) in numeric.iter_mut().enumerate() {
            let orig = model.store.get(id).data()[k];
            model.store.get_mut(id).data_mut()[k] = orig + eps;
            let up = model.loss(batch)?;
            model.store.get_mut(id).data_mut()[k] = orig - eps;
            let down = model.loss(batch)?;
            model.store.get_mut(id).data_mut()[k] = orig;
            *nk = (up - down) / (2.0 * eps);
        }
        per_tensor.push((id, analytic, numeric));
    }
    model.store.zero_grad();
    let mut out = Vec::new();
    for group in [ParamGroup::Base, ParamGroup::Encoder, ParamGroup::Flow] {
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for (id, ga, gn) in &per_tensor {
            if model.store.group(*id) == group {
                a.extend_from_slice(ga);
                n.extend_from_slice(gn);
            }
        }
        if a.is_empty() {
            continue;
        }
        let count = a.len();
        let c = compare_gradients(0, a, n);
        out.push(ParamCheck {
            name: format!("{group:?}").to_lowercase(),
            aggregate: true,
            group,
            count,
            rel_err: c.rel_err,
            abs_err: c.abs_err,
        });
    }
    for (id, ga, gn) in per_tensor {
        let c = compare_gradients(0, ga, gn);
        out.push(ParamCheck {
            name: model.store.name(id).to_string(),
            aggregate: false,
            group: model.store.group(id),
            count: c.analytic.len(),
            rel_err: c.rel_err,
            abs_err: c.abs_err,
        });
    }
    Ok(out)
}

/// The tiny model used for the full-model check: `d = 8`, two blocks,
/// flow dynamics scaled up so their gradients are well above rounding.
pub fn tiny_flow_model(kind: EncoderKind, seed: u64) -> Result<EncoderModel> {
    let mut encoder = EncoderConfig::new(kind, Injection::All);
    encoder.solver = SolverConfig::new(Scheme::Rk4, 5, GradMode::Unrolled)?;
    encoder.dynamics_std = 0.3;
    let cfg = ModelConfig {
        vocab: 6,
        out_vocab: 4,
        d_model: 8,
        d_ff: 16,
        blocks: 2,
        heads: 2,
        embed_std: 1.0,
        encoder,
    };
    let mut m = EncoderModel::new(&cfg, seed)?;
    // Random initial vectors and non-zero dynamics biases exercise every path.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in m.flow_ids() {
        let t = Tensor::randn(m.store.get(id).shape(), 0.3, &mut rng);
        m.store.set(id, &t)?;
    }
    Ok(m)
}

pub fn tiny_batch() -> Vec<Example> {
    vec![
        Example {
            input: vec![1, 4, 2, 5, 0],
            target: vec![3, 0, 1, 2, 2],
        },
        Example {
            input: vec![3, 3, 1, 0],
            target: vec![1, 2, 0, 3],
        },
    ]
}

/// Plain-text gradient report; the flag is true when every check passes.
pub fn gradcheck_report(seed: u64) -> Result<(String, bool)> {
    let mut s = String::new();
    let mut ok = true;
    writeln!(s, "primitive operations (tolerance {OP_TOLERANCE:e}, eps {FD_EPS:e})").unwrap();
    for c in op_checks(seed) {
        let pass = c.report.passes(OP_TOLERANCE);
        ok &= pass;
        writeln!(
            s,
            "  {:<14} {:>2}x{:<2} rel_err {:.3e} {}",
            c.op,
            c.shape.0,
            c.shape.1,
            c.report.max_rel_err(),
            if pass { "ok" } else { "FAIL" }
        )
        .unwrap();
        if let Some(f) = &c.report.failure {
            writeln!(s, "    {f}").unwrap();
        }
    }
    for kind in [EncoderKind::Floater, EncoderKind::FloaterBias] {
        writeln!(s, "full model, {kind} encoder, unrolled (tolerance {MODEL_TOLERANCE:e})").unwrap();
        let mut m = tiny_flow_model(kind, seed)?;
        for c in model_grad_check(&mut m, &tiny_batch(), FD_EPS)? {
            if c.aggregate {
                let pass = c.rel_err <= MODEL_TOLERANCE;
                ok &= pass;
                writeln!(
                    s,
                    "  group {:<12} {:>5} params rel_err {:.3e} {}",
                    c.name,
                    c.count,
                    c.rel_err,
                    if pass { "ok" } else { "FAIL" }
                )
                .unwrap();
            } else {
                // Informational: tensors whose true gradient vanishes
                // (key biases) show rounding noise as relative error.
                writeln!(
                    s,
                    "        {:<18} {:>5} params rel_err {:.3e} abs_err {:.3e}",
                    c.name, c.count, c.rel_err, c.abs_err
                )
                .unwrap();
            }
        }
    }
    writeln!(s, "{}", if ok { "all checks passed" } else { "some checks FAILED" }).unwrap();
    Ok((s, ok))
}

/// Max absolute gap between the integrated sinusoidal field and the closed-form
/// table, `L × d`, unit grid.
pub fn sinusoidal_ode_gap(len: usize, dim: usize, scheme: Scheme, substeps: usize) -> Result<f64> {
    let spec = SinusoidalSpec::new(dim)?;
    let table = sinusoidal(len, &spec);
    let grid = TimeGrid::equidistant(len.saturating_sub(1), 1.0)?;
    let cfg = SolverConfig::new(scheme, substeps, GradMode::Adjoint)?;
    let traj = encode_positions(&SinusoidalField(spec), table.row(0), &grid, &cfg)?;
    let mut gap: f64 = 0.0;
    for (i, state) in traj.states().iter().enumerate() {
        for (a, b) in state.iter().zip(table.row(i)) {
            gap = gap.max((a - b).abs());
        }
    }
    Ok(gap)
}

pub const EQUIVALENCE_FINE: (usize, f64) = (20, 1e-4);
pub const EQUIVALENCE_COARSE: (usize, f64) = (5, 1e-2);

/// Plain-text equivalence report for `L = 64, d = 32`.
pub fn equivalence_report(scheme: Scheme, substeps: Option<usize>) -> Result<(String, bool)> {
    let mut s = String::new();
    let mut ok = true;
    // An explicit substep count is judged against the loose bound.
    let runs = match substeps {
        Some(n) => vec![(n, EQUIVALENCE_COARSE.1)],
        None => vec![EQUIVALENCE_FINE, EQUIVALENCE_COARSE],
    };
    writeln!(s, "sinusoidal field integrated with {} on a unit grid, L = 64, d = 32", scheme.name()).unwrap();
    for (n, tol) in runs {
        let gap = sinusoidal_ode_gap(64, 32, scheme, n)?;
        let pass = gap <= tol;
        ok &= pass;
        let verdict = if pass { format!("<= {tol:e} ok") } else { format!("> {tol:e} FAIL") };
        writeln!(s, "  substeps {n:>3}: max abs gap {gap:.3e} {verdict}").unwrap();
    }
    Ok((s, ok))
}

/// Substep counts of the convergence study.
pub const ORDER_SUBSTEPS: [usize; 4] = [5, 10, 20, 40];

/// Least-squares slope of `log(error)` against `log(substeps)` on the
/// damped rotation `p' = [[-0.5, 2], [-2, -0.5]]·p` over `[0, 1]`.
pub fn solver_order_slope(scheme: Scheme) -> Result<f64> {
    let field = LinearField::new(Tensor::from_rows(&[vec![-0.5, 2.0], vec![-2.0, -0.5]]))?;
    let decay = (-0.5f64).exp();
    let exact = [decay * 2f64.cos(), -decay * 2f64.sin()];
    let mut pts = Vec::new();
    for n in ORDER_SUBSTEPS {
        let cfg = SolverConfig::new(scheme, n, GradMode::Adjoint)?;
        let p = integrate_segment(&field, &[1.0, 0.0], 0.0, 1.0, &cfg)?;
        let err = ((p[0] - exact[0]).powi(2) + (p[1] - exact[1]).powi(2)).sqrt();
        pts.push(((n as f64).ln(), err.ln()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(num / den)
}

/// One random trajectory-gradient comparison.
#[derive(Clone, Debug)]
pub struct AdjointCase {
    pub dim: usize,
    pub len: usize,
    pub substeps: usize,
    /// Adjoint against unrolled, relative.
    pub vs_unrolled: f64,
    /// Adjoint against central differences of the discrete solver, relative.
    pub vs_fd: f64,
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 { 0.0 } else { diff / scale }
}

/// Random instances with `d ≤ 8`, `L ≤ 6`, `substeps ≥ 10`, rk4 and the
/// linear loss `Σᵢ wᵢ·p(tᵢ)`. Gradients cover `θ_h` and `p(0)`.
pub fn adjoint_cases(seed: u64, count: usize) -> Result<Vec<AdjointCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng.random_range(2..=8);
        let len = rng.random_range(1..=6);
        let substeps = rng.random_range(10..=20);
        let hidden = rng.random_range(2..=2 * d);
        let mut h = DynamicsFunction::random(d, hidden, 0.5, &mut rng);
        let p0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<Vec<f64>> = (0..len).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let grid = TimeGrid::equidistant(len, rng.random_range(0.1..0.5))?;
        let adj_cfg = SolverConfig::new(Scheme::Rk4, substeps, GradMode::Adjoint)?;
        let unr_cfg = SolverConfig::new(Scheme::Rk4, substeps, GradMode::Unrolled)?;

        let traj = encode_positions(&h, &p0, &grid, &adj_cfg)?;
        let adj = crate::ode::adjoint_backward(&h, &traj, &grid, &adj_cfg, &w)?;
        let traj_u = encode_positions(&h, &p0, &grid, &unr_cfg)?;
        let unr = crate::ode::unrolled_backward(&h, &traj_u, &grid, &unr_cfg, &w)?;

        let loss = |h: &DynamicsFunction, p0: &[f64]| -> Result<f64> {
            let t = encode_positions(h, p0, &grid, &adj_cfg)?;
            Ok((1..=len).map(|i| t.state(i).iter().zip(&w[i - 1]).map(|(a, b)| a * b).sum::<f64>()).sum())
        };
        let theta = h.params();
        let mut fd = Vec::with_capacity(theta.len() + d);
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] = theta[k] + FD_EPS;
            h.set_params(&t)?;
            let up = loss(&h, &p0)?;
            t[k] = theta[k] - FD_EPS;
            h.set_params(&t)?;
            let down = loss(&h, &p0)?;
            fd.push((up - down) / (2.0 * FD_EPS));
        }
        h.set_params(&theta)?;
        for k in 0..d {
            let mut p = p0.clone();
            p[k] = p0[k] + FD_EPS;
            let up = loss(&h, &p)?;
            p[k] = p0[k] - FD_EPS;
            let down = loss(&h, &p)?;
            fd.push((up - down) / (2.0 * FD_EPS));
        }
        let flat = |g: &crate::ode::FieldGradient| [g.params.as_slice(), g.initial.as_slice()].concat();
        out.push(AdjointCase {
            dim: d,
            len,
            substeps,
            vs_unrolled: rel_gap(&flat(&adj), &flat(&unr)),
            vs_fd: rel_gap(&flat(&adj), &fd),
        });
    }
    Ok(out)
}

/// Dynamics scale of [`symmetry_model`]. At the default small scale an
/// untrained additive flow barely moves away from its initial vector.
pub const SYMMETRY_DYNAMICS_STD: f64 = 0.3;

/// Model used by the symmetry checks: `d = 16`, two blocks, two heads.
pub fn symmetry_model(kind: EncoderKind, injection: Injection, seed: u64) -> Result<EncoderModel> {
    let mut encoder = EncoderConfig::new(kind, injection);
    encoder.dynamics_std = SYMMETRY_DYNAMICS_STD;
    symmetry_model_with(encoder, seed)
}

/// [`symmetry_model`] with an explicit encoder configuration.
pub fn symmetry_model_with(encoder: EncoderConfig, seed: u64) -> Result<EncoderModel> {
    let cfg = ModelConfig {
        vocab: 24,
        out_vocab: 5,
        d_model: 16,
        d_ff: 32,
        blocks: 2,
        heads: 2,
        embed_std: 1.0,
        encoder,
    };
    EncoderModel::new(&cfg, seed)
}

/// `max |Π·Encode(x) − Encode(Π·x)|` over `count` random sequences of
/// distinct tokens (lengths 4 to 12) and random non-identity permutations.
pub fn permutation_gaps(model: &EncoderModel, seed: u64, count: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.random_range(4..=12);
        let x = rand::seq::index::sample(&mut rng, model.cfg.vocab, len).into_vec();
        let perm = loop {
            let p = rand::seq::index::sample(&mut rng, len, len).into_vec();
            if p.iter().enumerate().any(|(i, &j)| i != j) {
                break p;
            }
        };
        let px: Vec<usize> = perm.iter().map(|&j| x[j]).collect();
        let ex = model.encode(&x)?;
        let epx = model.encode(&px)?;
        let mut gap: f64 = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            for (a, b) in ex.row(j).iter().zip(epx.row(i)) {
                gap = gap.max((a - b).abs());
            }
        }
        out.push(gap);
    }
    Ok(out)
}

/// Pairs a sinusoidal input-only model with a bias-form flow model of the
/// same base seed whose dynamics and initial biases are zero, and counts
/// the random inputs on which their logits agree bitwise.
pub fn degeneration_matches(seed: u64, count: usize) -> Result<usize> {
    let vanilla = symmetry_model(EncoderKind::Sinusoidal, Injection::Input, seed)?;
    let mut flow = symmetry_model(EncoderKind::FloaterBias, Injection::All, seed)?;
    flow.zero_dynamics();
    flow.zero_initial_vectors();
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, 1));
    let mut same = 0;
    for _ in 0..count {
        let len = rng.random_range(1..=16);
        let x: Vec<usize> = (0..len).map(|_| rng.random_range(0..vanilla.cfg.vocab)).collect();
        if vanilla.encode(&x)?.bitwise_eq(&flow.encode(&x)?) {
            same += 1;
        }
    }
    Ok(same)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_on_every_shape() {
        for c in op_checks(1) {
            assert!(c.report.passes(OP_TOLERANCE), "{} {:?}: {}", c.op, c.shape, c.report);
        }
    }

    #[test]
    fn equivalence_gaps() {
        assert!(sinusoidal_ode_gap(64, 32, Scheme::Rk4, 20).unwrap() <= 1e-4);
        assert!(sinusoidal_ode_gap(64, 32, Scheme::Rk4, 5).unwrap() <= 1e-2);
        assert_eq!(sinusoidal_ode_gap(1, 4, Scheme::Rk4, 5).unwrap(), 0.0);
    }
}
