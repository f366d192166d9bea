//! Position encodings sampled from the flow of a learned vector field.
//!
//! One dynamics function is shared by every block. Each block (slot) owns
//! its initial vectors: one in additive mode, three (query, key, value)
//! in bias mode.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{
    self, encode_positions, DifferentiableField, DynamicsFunction, FieldGradient, SolverConfig,
    TimeGrid, Trajectory,
};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_DELTA: f64 = 0.1;
/// Standard deviation of trainable initial vectors.
pub const INITIAL_STD: f64 = 0.02;
/// Standard deviation of dynamics weights at initialization (variance `1e-4`).
pub const DYNAMICS_STD: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloaterMode {
    /// `p⁽ⁿ⁾(t_i)` is added to the block input.
    Additive,
    /// Trajectories supply biases added after the Q, K, V projections.
    Bias,
}

impl FloaterMode {
    pub fn projections(self) -> usize {
        match self {
            FloaterMode::Additive => 1,
            FloaterMode::Bias => 3,
        }
    }
}

struct CacheEntry {
    key: Vec<u64>,
    traj: Trajectory,
}

pub struct FloaterState {
    /// `W_a, b_a, W_b, b_b` of the shared dynamics.
    pub dynamics: [ParamId; 4],
    /// `initial[slot][proj]`.
    pub initial: Vec<Vec<ParamId>>,
    pub mode: FloaterMode,
    pub dim: usize,
    pub hidden: usize,
    pub cfg: SolverConfig,
    pub delta: f64,
    cache: Mutex<HashMap<(usize, usize), CacheEntry>>,
}

impl Clone for FloaterState {
    fn clone(&self) -> Self {
        FloaterState {
            dynamics: self.dynamics,
            initial: self.initial.clone(),
            mode: self.mode,
            dim: self.dim,
            hidden: self.hidden,
            cfg: self.cfg,
            delta: self.delta,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl std::fmt::Debug for FloaterState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FloaterState")
            .field("mode", &self.mode)
            .field("slots", &self.initial.len())
            .field("dim", &self.dim)
            .field("hidden", &self.hidden)
            .field("cfg", &self.cfg)
            .field("delta", &self.delta)
            .finish()
    }
}

const PROJ_NAMES: [&str; 3] = ["q", "k", "v"];

impl FloaterState {
    /// Registers the shared dynamics and `slots` sets of initial vectors.
    /// Dynamics weights are drawn with `dynamics_std`, dynamics biases start at 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        hidden: usize,
        slots: usize,
        mode: FloaterMode,
        cfg: SolverConfig,
        delta: f64,
        dynamics_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::contract(format!("Δ must be positive, got {delta}")));
        }
        if dim == 0 || hidden == 0 {
            return Err(Error::contract("flow dimension and hidden width must be positive"));
        }
        let g = ParamGroup::Flow;
        let dynamics = [
            store.add("flow.w_a", Tensor::randn(&[dim + 1, hidden], dynamics_std, rng), g),
            store.add("flow.b_a", Tensor::zeros(&[hidden]), g),
            store.add("flow.w_b", Tensor::randn(&[hidden, dim], dynamics_std, rng), g),
            store.add("flow.b_b", Tensor::zeros(&[dim]), g),
        ];
        let initial = (0..slots)
            .map(|s| {
                (0..mode.projections())
                    .map(|p| {
                        let name = match mode {
                            FloaterMode::Additive => format!("flow.p0.block{}", s + 1),
                            FloaterMode::Bias => {
                                format!("flow.b{}0.block{}", PROJ_NAMES[p], s + 1)
                            }
                        };
                        store.add(name, Tensor::randn(&[dim], INITIAL_STD, rng), g)
                    })
                    .collect()
            })
            .collect();
        Ok(FloaterState {
            dynamics,
            initial,
            mode,
            dim,
            hidden,
            cfg,
            delta,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn slots(&self) -> usize {
        self.initial.len()
    }

    /// `|θ_h| + slots · projections · d`.
    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.dim, self.hidden, self.slots(), self.mode)
    }

    pub fn param_count_for(dim: usize, hidden: usize, slots: usize, mode: FloaterMode) -> usize {
        DynamicsFunction::param_count(dim, hidden) + slots * mode.projections() * dim
    }

    /// Every id owned by the flow.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.dynamics.to_vec();
        ids.extend(self.initial.iter().flatten());
        ids
    }

    /// The shared dynamics as a standalone field.
    pub fn dynamics(&self, store: &ParamStore) -> DynamicsFunction {
        let [a, b, c, d] = self.dynamics.map(|id| store.get(id).clone().with_grad(false));
        DynamicsFunction::from_parts(a, b, c, d).expect("shapes fixed at construction")
    }

    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }

    fn initial_id(&self, slot: usize, proj: usize) -> Result<ParamId> {
        self.initial
            .get(slot)
            .and_then(|s| s.get(proj))
            .copied()
            .ok_or_else(|| {
                Error::Index(format!(
                    "flow has {} slots with {} projections; asked for slot {slot}, projection {proj}",
                    self.slots(),
                    self.mode.projections()
                ))
            })
    }

    fn cache_key(&self, field: &DynamicsFunction, p0: &[f64]) -> Vec<u64> {
        let mut key: Vec<u64> = field.params().iter().map(|v| v.to_bits()).collect();
        key.extend(p0.iter().map(|v| v.to_bits()));
        key.push(self.delta.to_bits());
        key.push(self.cfg.substeps as u64);
        key.push(self.cfg.scheme.order() as u64);
        key.push(self.cfg.grad_mode as u64);
        key
    }

    /// Trajectory of `(slot, proj)` over `{Δ, …, len·Δ}`; served from the
    /// cache when a run with identical parameters covers it.
    pub fn trajectory(
        &self,
        store: &ParamStore,
        slot: usize,
        proj: usize,
        len: usize,
    ) -> Result<Trajectory> {
        let id = self.initial_id(slot, proj)?;
        let field = self.dynamics(store);
        let p0 = store.get(id).data();
        let key = self.cache_key(&field, p0);
        {
            let cache = self.cache.lock().expect("cache lock");
            if let Some(e) = cache.get(&(slot, proj)) {
                if e.key == key && e.traj.len() >= len {
                    return Ok(e.traj.prefix(len));
                }
            }
        }
        let grid = TimeGrid::equidistant(len, self.delta)?;
        let traj = encode_positions(&field, p0, &grid, &self.cfg)?;
        self.cache.lock().expect("cache lock").insert(
            (slot, proj),
            CacheEntry {
                key,
                traj: traj.clone(),
            },
        );
        Ok(traj)
    }

    /// Gradients of a loss whose cotangents w.r.t. `p(t_1..t_L)` are `dl_dp`,
    /// by the configured route.
    pub fn backward(
        &self,
        store: &ParamStore,
        slot: usize,
        proj: usize,
        dl_dp: &[Vec<f64>],
    ) -> Result<FieldGradient> {
        let traj = self.trajectory(store, slot, proj, dl_dp.len())?;
        let grid = TimeGrid::equidistant(dl_dp.len(), self.delta)?;
        ode::backward(&self.dynamics(store), &traj, &grid, &self.cfg, dl_dp)
    }

    /// Adds a [`FieldGradient`] into the grad slots of the dynamics and the initial vector.
    pub fn absorb(
        &self,
        store: &mut ParamStore,
        slot: usize,
        proj: usize,
        grad: &FieldGradient,
    ) -> Result<()> {
        let mut offset = 0;
        for id in self.dynamics {
            let n = store.get(id).len();
            store.accumulate(id, &grad.params[offset..offset + n]);
            offset += n;
        }
        let id = self.initial_id(slot, proj)?;
        store.accumulate(id, &grad.initial);
        Ok(())
    }

    fn block_slot(&self, block: usize) -> Result<usize> {
        if block == 0 || block > self.slots() {
            return Err(Error::Index(format!(
                "block {block} has no flow initial vectors (blocks 1..={})",
                self.slots()
            )));
        }
        Ok(block - 1)
    }
}

/// Rows `p⁽ⁿ⁾(t_1) … p⁽ⁿ⁾(t_L)` for block `n ≥ 1` (additive mode).
pub fn floater_encode(
    state: &FloaterState,
    store: &ParamStore,
    len: usize,
    block: usize,
) -> Result<Tensor> {
    if state.mode != FloaterMode::Additive {
        return Err(Error::contract("floater_encode needs an additive-mode flow"));
    }
    let slot = state.block_slot(block)?;
    Ok(state.trajectory(store, slot, 0, len)?.grid_states())
}

/// `(B_q, B_k, B_v)` for block `n ≥ 1` (bias mode).
pub fn floater_bias(
    state: &FloaterState,
    store: &ParamStore,
    len: usize,
    block: usize,
) -> Result<[Tensor; 3]> {
    if state.mode != FloaterMode::Bias {
        return Err(Error::contract("floater_bias needs a bias-mode flow"));
    }
    let slot = state.block_slot(block)?;
    let mut out = Vec::with_capacity(3);
    for proj in 0..3 {
        out.push(state.trajectory(store, slot, proj, len)?.grid_states());
    }
    Ok(out.try_into().expect("three projections"))
}
