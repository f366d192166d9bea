//! Transformer encoder with a per-position output head.

mod attention;
mod checkpoint;
mod warm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use attention::{block_forward, self_attention, Attention, BlockParams, BlockPosition, MASK_VALUE};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use warm::warm_start;

use crate::autodiff::{Tape, Var};
use crate::encoders::{EncoderConfig, FloaterMode, Injection, PositionEncoder};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub out_vocab: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub heads: usize,
    pub embed_std: f64,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab: 32,
            out_vocab: 32,
            d_model: 64,
            d_ff: 128,
            blocks: 2,
            heads: 4,
            embed_std: 0.1,
            encoder: EncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::contract("a model needs at least one block"));
        }
        if self.vocab == 0 || self.out_vocab == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::contract("vocabularies and widths must be positive"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::contract(format!(
                "{} heads do not divide d = {}",
                self.heads, self.d_model
            )));
        }
        self.encoder.solver.validate()
    }
}

/// One training or evaluation sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
}

/// Loss and token accuracy over a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    /// Mean over sequences of the per-sequence mean token loss.
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

impl BatchStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Position inputs for every block at the longest length of a batch.
struct Positions {
    blocks: Vec<(Option<Var>, Option<[Var; 3]>)>,
    /// `(slot, projection, leaf)` for flow trajectories entering the tape.
    flow_leaves: Vec<(usize, usize, Var)>,
}

#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub embed: ParamId,
    pub blocks: Vec<BlockParams>,
    pub head: ParamId,
    pub encoder: PositionEncoder,
}

fn encoder_seed(seed: u64) -> u64 {
    crate::seed::derive(seed, u64::MAX)
}

impl EncoderModel {
    /// Base and encoder parameters drawn from streams derived from `seed`.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::with_seeds(cfg, seed, encoder_seed(seed))
    }

    /// Base parameters (embedding, blocks, head) from `base_seed`,
    /// position-encoder parameters from `encoder_seed`.
    pub fn with_seeds(cfg: &ModelConfig, base_seed: u64, encoder_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        let d = cfg.d_model;
        let embed = store.add(
            "embed",
            Tensor::randn(&[cfg.vocab, d], cfg.embed_std, &mut rng),
            ParamGroup::Base,
        );
        let blocks = (1..=cfg.blocks)
            .map(|n| BlockParams::new(&mut store, n, d, cfg.d_ff, cfg.heads, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = store.add(
            "head",
            Tensor::randn(&[d, cfg.out_vocab], 1.0 / (d as f64).sqrt(), &mut rng),
            ParamGroup::Base,
        );
        let mut erng = ChaCha8Rng::seed_from_u64(encoder_seed);
        let encoder = PositionEncoder::build(&cfg.encoder, d, cfg.blocks, &mut store, &mut erng)?;
        Ok(EncoderModel {
            cfg: cfg.clone(),
            store,
            embed,
            blocks,
            head,
            encoder,
        })
    }

    pub fn injection(&self) -> Injection {
        self.cfg.encoder.injection
    }

    /// Whether block `n ≥ 1` receives position information.
    pub fn injected(&self, n: usize) -> bool {
        n >= 1 && n <= self.injection().slots(self.cfg.blocks)
    }

    /// Every trainable scalar.
    pub fn param_count(&self) -> usize {
        self.store.count(None)
    }

    /// `V·d + N·block + d·V_out + encoder`.
    pub fn param_count_formula(cfg: &ModelConfig, encoder: &PositionEncoder) -> usize {
        let d = cfg.d_model;
        cfg.vocab * d
            + cfg.blocks * BlockParams::param_count(d, cfg.d_ff)
            + d * cfg.out_vocab
            + encoder.param_count()
    }

    fn positions(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        len: usize,
        track_flow: bool,
    ) -> Result<Positions> {
        let n = self.cfg.blocks;
        let mut blocks = vec![(None, None); n];
        let mut flow_leaves = Vec::new();
        let store = &self.store;
        match &self.encoder {
            PositionEncoder::None => {}
            PositionEncoder::LearnedTable(tables) => {
                for (slot, t) in tables.iter().enumerate() {
                    blocks[slot].0 = Some(t.lookup_on_tape(tape, bound, len)?);
                }
            }
            PositionEncoder::Rnn(r) => {
                let e = r.encode_on_tape(tape, bound, len)?;
                for b in blocks.iter_mut().take(self.injection().slots(n)) {
                    b.0 = Some(e);
                }
            }
            PositionEncoder::Floater(state) | PositionEncoder::FloaterBias { state, .. } => {
                if let PositionEncoder::FloaterBias { base, .. } = &self.encoder {
                    blocks[0].0 = Some(tape.constant(crate::encoders::sinusoidal(len, base)));
                }
                for slot in 0..state.slots() {
                    let mut vars = [None; 3];
                    for (proj, v) in vars.iter_mut().enumerate().take(state.mode.projections()) {
                        let traj = state.trajectory(store, slot, proj, len)?;
                        let leaf = tape.leaf(traj.grid_states().with_grad(track_flow));
                        if track_flow {
                            flow_leaves.push((slot, proj, leaf));
                        }
                        *v = Some(leaf);
                    }
                    match state.mode {
                        FloaterMode::Additive => blocks[slot].0 = vars[0],
                        FloaterMode::Bias => {
                            blocks[slot].1 = Some(vars.map(|v| v.expect("three projections")))
                        }
                    }
                }
            }
            PositionEncoder::Sinusoidal(_) | PositionEncoder::PerBlockSinusoidal(_) => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    let e = self.encoder.additive(store, len, i + 1, self.injected(i + 1))?;
                    b.0 = e.map(|t| tape.constant(t));
                }
            }
        }
        Ok(Positions {
            blocks,
            flow_leaves,
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some((i, &t)) = tokens.iter().enumerate().find(|(_, &t)| t >= self.cfg.vocab) {
            return Err(Error::Index(format!(
                "token {t} at position {i} is outside the vocabulary of {}",
                self.cfg.vocab
            )));
        }
        Ok(())
    }

    fn sequence(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        pos: &Positions,
        tokens: &[usize],
    ) -> Result<Var> {
        self.check_tokens(tokens)?;
        let len = tokens.len();
        let prefix: Vec<usize> = (0..len).collect();
        let cut = |tape: &mut Tape, v: Var| -> Result<Var> {
            if tape.shape(v).0 == len {
                Ok(v)
            } else {
                tape.gather_rows(v, &prefix)
            }
        };
        let mut x = tape.gather_rows(bound[self.embed], tokens)?;
        for (blk, &(add, bias)) in self.blocks.iter().zip(&pos.blocks) {
            let additive = add.map(|v| cut(tape, v)).transpose()?;
            let bias = match bias {
                Some([q, k, v]) => Some([cut(tape, q)?, cut(tape, k)?, cut(tape, v)?]),
                None => None,
            };
            x = block_forward(tape, bound, blk, x, BlockPosition { additive, bias }, None)?;
        }
        tape.matmul(x, bound[self.head])
    }

    /// Logits `L × V_out` for one sequence.
    pub fn encode(&self, tokens: &[usize]) -> Result<Tensor> {
        Ok(self.encode_batch(&[tokens.to_vec()])?.remove(0))
    }

    /// Logits for several sequences sharing one position computation.
    pub fn encode_batch(&self, seqs: &[Vec<usize>]) -> Result<Vec<Tensor>> {
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut tape = Tape::new();
        let bound = self.store.bind_constants(&mut tape);
        let pos = self.positions(&mut tape, &bound, max_len, false)?;
        seqs.iter()
            .map(|s| {
                let v = self.sequence(&mut tape, &bound, &pos, s)?;
                Ok(tape.value(v).clone())
            })
            .collect()
    }

    /// Argmax predictions per position.
    pub fn predict_batch(&self, seqs: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        Ok(self.encode_batch(seqs)?.iter().map(argmax_rows).collect())
    }

    /// Loss and accuracy without gradients.
    pub fn evaluate(&self, batch: &[Example]) -> Result<BatchStats> {
        let inputs: Vec<Vec<usize>> = batch.iter().map(|e| e.input.clone()).collect();
        let logits = self.encode_batch(&inputs)?;
        let mut tape = Tape::new();
        let mut loss = 0.0;
        let mut correct = 0;
        let mut total = 0;
        for (l, e) in logits.into_iter().zip(batch) {
            correct += count_correct(&l, &e.target);
            total += e.target.len();
            let v = tape.constant(l);
            let ce = tape.cross_entropy(v, &e.target)?;
            loss += tape.value(ce).data()[0];
        }
        Ok(BatchStats {
            loss: loss / batch.len().max(1) as f64,
            correct,
            total,
        })
    }

    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        Ok(self.evaluate(batch)?.loss)
    }

    /// Accumulates `∂loss/∂θ` into the store's grad slots and returns the
    /// batch statistics. With `flow_grads = false` the flow trajectories
    /// are treated as constants and no backward integration runs.
    pub fn loss_and_grad(&mut self, batch: &[Example], flow_grads: bool) -> Result<BatchStats> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let max_len = batch.iter().map(|e| e.input.len()).max().unwrap_or(0);
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let pos = self.positions(&mut tape, &bound, max_len, flow_grads)?;
        let mut losses = Vec::with_capacity(batch.len());
        let mut correct = 0;
        let mut total = 0;
        for e in batch {
            if e.input.len() != e.target.len() {
                return Err(Error::dim("input and target lengths differ"));
            }
            let logits = self.sequence(&mut tape, &bound, &pos, &e.input)?;
            correct += count_correct(tape.value(logits), &e.target);
            total += e.target.len();
            losses.push(tape.cross_entropy(logits, &e.target)?);
        }
        let sum = if losses.len() == 1 {
            losses[0]
        } else {
            let cat = tape.concat_cols(&losses)?;
            tape.sum(cat)?
        };
        let loss = tape.scale(sum, 1.0 / batch.len() as f64)?;
        tape.backward(loss)?;
        self.store.absorb_grads(&tape, &bound);
        if let Some(state) = self.encoder.flow() {
            for &(slot, proj, leaf) in &pos.flow_leaves {
                let Some(g) = tape.grad_data(leaf) else {
                    continue;
                };
                let dl_dp: Vec<Vec<f64>> = g.chunks(state.dim).map(<[f64]>::to_vec).collect();
                let fg = state.backward(&self.store, slot, proj, &dl_dp)?;
                state.absorb(&mut self.store, slot, proj, &fg)?;
            }
        }
        Ok(BatchStats {
            loss: tape.value(loss).data()[0],
            correct,
            total,
        })
    }

    /// Ids belonging to the flow (dynamics and initial vectors).
    pub fn flow_ids(&self) -> Vec<ParamId> {
        self.encoder.flow().map(|s| s.param_ids()).unwrap_or_default()
    }

    /// Sets every flow dynamics tensor to zero.
    pub fn zero_dynamics(&mut self) {
        if let Some(state) = self.encoder.flow() {
            for id in state.dynamics {
                let z = Tensor::zeros(self.store.get(id).shape());
                self.store.set(id, &z).expect("same shape");
            }
        }
    }

    /// Sets every flow initial vector to zero.
    pub fn zero_initial_vectors(&mut self) {
        if let Some(state) = self.encoder.flow() {
            for &id in state.initial.iter().flatten() {
                let z = Tensor::zeros(self.store.get(id).shape());
                self.store.set(id, &z).expect("same shape");
            }
        }
    }

    /// Numeric encoding added at block `n`, if any (for export and inspection).
    pub fn block_encoding(&self, len: usize, n: usize) -> Result<Option<Tensor>> {
        self.encoder.additive(&self.store, len, n, self.injected(n))
    }

    /// Query, key and value bias trajectories at block `n`, if any.
    pub fn block_bias(&self, len: usize, n: usize) -> Result<Option<[Tensor; 3]>> {
        match &self.encoder {
            PositionEncoder::FloaterBias { state, .. } if self.injected(n) => {
                Ok(Some(crate::encoders::floater_bias(state, &self.store, len, n)?))
            }
            _ => Ok(None),
        }
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            t.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

fn count_correct(logits: &Tensor, target: &[usize]) -> usize {
    argmax_rows(logits)
        .iter()
        .zip(target)
        .filter(|(p, t)| p == t)
        .count()
}
