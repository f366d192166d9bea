//! Flat TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tasks::{TaskKind, TaskSpec};
use super::train::TrainConfig;
use crate::encoders::{EncoderConfig, EncoderKind, Injection, RnnInput, DEFAULT_BASE, DEFAULT_DELTA, DYNAMICS_STD};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ode::{GradMode, Scheme, SolverConfig};

/// Every knob of a run as one flat key-value table. Missing keys take
/// their defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub task: TaskKind,
    pub vocab: usize,
    pub min_len: usize,
    pub train_len: usize,
    pub bins: Vec<(usize, usize)>,
    pub shift: usize,
    pub eval_per_bin: usize,

    pub encoder: EncoderKind,
    pub injection: Injection,
    pub solver: Scheme,
    pub substeps: usize,
    pub grad_mode: GradMode,
    pub delta: f64,
    pub base: f64,
    /// `0` means `2 · d_model`.
    pub flow_hidden: usize,
    pub dynamics_std: f64,
    pub table_max_len: usize,
    pub rnn_layers: usize,
    pub rnn_input: RnnInput,
    pub init_std: f64,

    pub d_model: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub heads: usize,
    pub embed_std: f64,

    pub lr: f64,
    pub warmup: usize,
    pub flow_lr_mult: f64,
    pub flow_update_every: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub halve_lr: bool,
    pub final_eval_examples: usize,

    /// Rows of `compare`, written `encoder:injection` with optional
    /// `:layers:input` for recurrent rows.
    pub rows: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let task = TaskSpec::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let enc = EncoderConfig::default();
        RunConfig {
            seed: 0,
            task: task.kind,
            vocab: task.vocab,
            min_len: task.min_len,
            train_len: task.train_len,
            bins: task.bins,
            shift: task.shift,
            eval_per_bin: 32,
            encoder: EncoderKind::FloaterBias,
            injection: Injection::All,
            solver: enc.solver.scheme,
            substeps: enc.solver.substeps,
            grad_mode: enc.solver.grad_mode,
            delta: DEFAULT_DELTA,
            base: DEFAULT_BASE,
            flow_hidden: 0,
            dynamics_std: DYNAMICS_STD,
            table_max_len: enc.table_max_len,
            rnn_layers: enc.rnn_layers,
            rnn_input: enc.rnn_input,
            init_std: enc.init_std,
            d_model: model.d_model,
            d_ff: model.d_ff,
            blocks: model.blocks,
            heads: model.heads,
            embed_std: model.embed_std,
            lr: train.lr,
            warmup: train.warmup,
            flow_lr_mult: train.flow_lr_mult,
            flow_update_every: train.flow_update_every,
            epochs: train.epochs,
            steps_per_epoch: train.steps_per_epoch,
            batch_size: train.batch_size,
            halve_lr: train.halve_lr,
            final_eval_examples: train.final_eval_examples,
            rows: default_rows(),
        }
    }
}

fn default_rows() -> Vec<String> {
    let mut rows = Vec::new();
    for inj in ["input", "all"] {
        for kind in ["sinusoidal", "table", "rnn", "floater", "floater-bias"] {
            rows.push(format!("{kind}:{inj}"));
        }
    }
    rows.push("sin-per-block:all".into());
    rows.push("rnn:input:2:scalar".into());
    rows.push("rnn:input:1:vectorized".into());
    rows
}

/// One `compare` row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSpec {
    pub encoder: EncoderKind,
    pub injection: Injection,
    pub rnn_layers: Option<usize>,
    pub rnn_input: Option<RnnInput>,
}

impl RowSpec {
    pub fn label(&self) -> String {
        let mut s = format!("{}:{}", self.encoder, self.injection);
        if self.encoder == EncoderKind::Rnn {
            if let (Some(l), Some(i)) = (self.rnn_layers, self.rnn_input) {
                s.push_str(&format!(":{l}:{}", i.name()));
            }
        }
        s
    }
}

impl std::str::FromStr for RowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Parse(format!("row {s:?} is not encoder:injection[:layers:input]"));
        match parts.as_slice() {
            [e, i] => Ok(RowSpec {
                encoder: e.parse()?,
                injection: i.parse()?,
                rnn_layers: None,
                rnn_input: None,
            }),
            [e, i, l, z] => {
                let encoder: EncoderKind = e.parse()?;
                if encoder != EncoderKind::Rnn {
                    return Err(bad());
                }
                Ok(RowSpec {
                    encoder,
                    injection: i.parse()?,
                    rnn_layers: Some(l.parse().map_err(|_| bad())?),
                    rnn_input: Some(z.parse()?),
                })
            }
            _ => Err(bad()),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            vocab: self.vocab,
            min_len: self.min_len,
            train_len: self.train_len,
            bins: self.bins.clone(),
            shift: self.shift,
        }
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            kind: self.encoder,
            injection: self.injection,
            base: self.base,
            delta: self.delta,
            solver: SolverConfig::new(self.solver, self.substeps, self.grad_mode)?,
            flow_hidden: (self.flow_hidden > 0).then_some(self.flow_hidden),
            dynamics_std: self.dynamics_std,
            table_max_len: self.table_max_len,
            rnn_layers: self.rnn_layers,
            rnn_input: self.rnn_input,
            init_std: self.init_std,
        })
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab: self.vocab,
            out_vocab: self.task_spec().out_vocab(),
            d_model: self.d_model,
            d_ff: self.d_ff,
            blocks: self.blocks,
            heads: self.heads,
            embed_std: self.embed_std,
            encoder: self.encoder_config()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            warmup: self.warmup,
            flow_lr_mult: self.flow_lr_mult,
            flow_update_every: self.flow_update_every,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            batch_size: self.batch_size,
            seed: self.seed,
            halve_lr: self.halve_lr,
            final_eval_examples: self.final_eval_examples,
            ..TrainConfig::default()
        }
    }

    pub fn row_specs(&self) -> Result<Vec<RowSpec>> {
        self.rows.iter().map(|r| r.parse()).collect()
    }

    /// Copy with the encoder fields of `row` applied.
    pub fn for_row(&self, row: &RowSpec) -> RunConfig {
        let mut c = self.clone();
        c.encoder = row.encoder;
        c.injection = row.injection;
        if let Some(l) = row.rnn_layers {
            c.rnn_layers = l;
        }
        if let Some(i) = row.rnn_input {
            c.rnn_input = i;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.task_spec().validate()?;
        self.model_config()?;
        self.train_config().validate()?;
        self.row_specs()?;
        Ok(())
    }
}
