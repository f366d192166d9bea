//! Position-encoding strategies.

mod floater;
mod rnn;
mod sinusoidal;
mod table;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use floater::{
    floater_bias, floater_encode, FloaterMode, FloaterState, DEFAULT_DELTA, DYNAMICS_STD,
    INITIAL_STD,
};
pub use rnn::{rnn_encode, RnnEncoder, RnnInput, RnnLayer};
pub use sinusoidal::{
    sinusoidal, sinusoidal_dynamics, sinusoidal_per_block, SinusoidalField, SinusoidalSpec,
    DEFAULT_BASE,
};
pub use table::{table_lookup, LearnedTable};

use crate::error::{Error, Result};
use crate::ode::SolverConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "sinusoidal")]
    Sinusoidal,
    #[serde(rename = "sin-per-block")]
    SinPerBlock,
    #[serde(rename = "table")]
    Table,
    #[serde(rename = "rnn")]
    Rnn,
    #[serde(rename = "floater")]
    Floater,
    #[serde(rename = "floater-bias")]
    FloaterBias,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 7] = [
        EncoderKind::None,
        EncoderKind::Sinusoidal,
        EncoderKind::SinPerBlock,
        EncoderKind::Table,
        EncoderKind::Rnn,
        EncoderKind::Floater,
        EncoderKind::FloaterBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::None => "none",
            EncoderKind::Sinusoidal => "sinusoidal",
            EncoderKind::SinPerBlock => "sin-per-block",
            EncoderKind::Table => "table",
            EncoderKind::Rnn => "rnn",
            EncoderKind::Floater => "floater",
            EncoderKind::FloaterBias => "floater-bias",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown encoder {s:?}")))
    }
}

/// Which blocks receive position information.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Injection {
    /// Only the first block; later blocks see their input unchanged.
    Input,
    /// Every block.
    All,
}

impl Injection {
    pub fn slots(self, blocks: usize) -> usize {
        match self {
            Injection::Input => 1,
            Injection::All => blocks,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Injection::Input => "input",
            Injection::All => "all",
        }
    }
}

impl fmt::Display for Injection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Injection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Injection::Input),
            "all" => Ok(Injection::All),
            _ => Err(Error::Parse(format!("unknown injection policy {s:?}"))),
        }
    }
}

/// Everything needed to build a [`PositionEncoder`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub injection: Injection,
    pub base: f64,
    pub delta: f64,
    pub solver: SolverConfig,
    /// Hidden width of the dynamics; `2d` when absent.
    pub flow_hidden: Option<usize>,
    pub dynamics_std: f64,
    pub table_max_len: usize,
    pub rnn_layers: usize,
    pub rnn_input: RnnInput,
    /// Initialization scale of table and recurrent weights.
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Sinusoidal,
            injection: Injection::Input,
            base: DEFAULT_BASE,
            delta: DEFAULT_DELTA,
            solver: SolverConfig::default(),
            flow_hidden: None,
            dynamics_std: DYNAMICS_STD,
            table_max_len: 20,
            rnn_layers: 1,
            rnn_input: RnnInput::Scalar,
            init_std: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, injection: Injection) -> Self {
        EncoderConfig {
            kind,
            injection,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub enum PositionEncoder {
    None,
    Sinusoidal(SinusoidalSpec),
    PerBlockSinusoidal(SinusoidalSpec),
    /// One table per injected block.
    LearnedTable(Vec<LearnedTable>),
    /// One recurrence shared by every injected block.
    Rnn(RnnEncoder),
    Floater(FloaterState),
    /// Sinusoidal encoding at the input plus flow-driven Q/K/V biases.
    FloaterBias {
        state: FloaterState,
        base: SinusoidalSpec,
    },
}

impl PositionEncoder {
    /// Registers the encoder's parameters in `store` (none for fixed encoders).
    pub fn build<R: Rng + ?Sized>(
        cfg: &EncoderConfig,
        dim: usize,
        blocks: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let slots = cfg.injection.slots(blocks);
        let spec = || SinusoidalSpec::with_base(dim, cfg.base);
        let hidden = cfg.flow_hidden.unwrap_or(2 * dim);
        let flow = |mode, store: &mut ParamStore, rng: &mut R| {
            FloaterState::new(
                store,
                dim,
                hidden,
                slots,
                mode,
                cfg.solver,
                cfg.delta,
                cfg.dynamics_std,
                rng,
            )
        };
        Ok(match cfg.kind {
            EncoderKind::None => PositionEncoder::None,
            EncoderKind::Sinusoidal => PositionEncoder::Sinusoidal(spec()?),
            EncoderKind::SinPerBlock => PositionEncoder::PerBlockSinusoidal(spec()?),
            EncoderKind::Table => PositionEncoder::LearnedTable(
                (0..slots)
                    .map(|s| {
                        let name = format!("pos.table.block{}", s + 1);
                        LearnedTable::new(store, &name, cfg.table_max_len, dim, cfg.init_std, rng)
                    })
                    .collect(),
            ),
            EncoderKind::Rnn => PositionEncoder::Rnn(RnnEncoder::new(
                store,
                dim,
                cfg.rnn_layers,
                cfg.rnn_input,
                cfg.delta,
                cfg.init_std,
                rng,
            )?),
            EncoderKind::Floater => PositionEncoder::Floater(flow(FloaterMode::Additive, store, rng)?),
            EncoderKind::FloaterBias => PositionEncoder::FloaterBias {
                base: spec()?,
                state: flow(FloaterMode::Bias, store, rng)?,
            },
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            PositionEncoder::None => EncoderKind::None,
            PositionEncoder::Sinusoidal(_) => EncoderKind::Sinusoidal,
            PositionEncoder::PerBlockSinusoidal(_) => EncoderKind::SinPerBlock,
            PositionEncoder::LearnedTable(_) => EncoderKind::Table,
            PositionEncoder::Rnn(_) => EncoderKind::Rnn,
            PositionEncoder::Floater(_) => EncoderKind::Floater,
            PositionEncoder::FloaterBias { .. } => EncoderKind::FloaterBias,
        }
    }

    /// Trainable scalars owned by the encoder.
    pub fn param_count(&self) -> usize {
        match self {
            PositionEncoder::None
            | PositionEncoder::Sinusoidal(_)
            | PositionEncoder::PerBlockSinusoidal(_) => 0,
            PositionEncoder::LearnedTable(t) => t.iter().map(LearnedTable::param_count).sum(),
            PositionEncoder::Rnn(r) => r.param_count(),
            PositionEncoder::Floater(s) | PositionEncoder::FloaterBias { state: s, .. } => {
                s.param_count()
            }
        }
    }

    pub fn flow(&self) -> Option<&FloaterState> {
        match self {
            PositionEncoder::Floater(s) | PositionEncoder::FloaterBias { state: s, .. } => Some(s),
            _ => None,
        }
    }

    /// The matrix added to the input of block `block ≥ 1`, if any.
    ///
    /// `injected` tells whether the block receives position information
    /// under the model's injection policy.
    pub fn additive(
        &self,
        store: &ParamStore,
        len: usize,
        block: usize,
        injected: bool,
    ) -> Result<Option<Tensor>> {
        if block == 0 {
            return Err(Error::Index("block indices start at 1".into()));
        }
        if !injected {
            return Ok(None);
        }
        Ok(match self {
            PositionEncoder::None => None,
            PositionEncoder::Sinusoidal(s) => Some(sinusoidal(len, s)),
            PositionEncoder::PerBlockSinusoidal(s) => Some(sinusoidal_per_block(len, s, block)?),
            PositionEncoder::LearnedTable(t) => Some(table_lookup(&t[block - 1], store, len)?),
            PositionEncoder::Rnn(r) => Some(rnn_encode(r, store, len)?),
            PositionEncoder::Floater(s) => Some(floater_encode(s, store, len, block)?),
            PositionEncoder::FloaterBias { base, .. } => {
                (block == 1).then(|| sinusoidal(len, base))
            }
        })
    }
}
