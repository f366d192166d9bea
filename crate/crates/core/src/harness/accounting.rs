//! Parameter accounting against closed-form counts.

use std::fmt::Write as _;

use crate::encoders::{EncoderKind, Injection, RnnInput};
use crate::error::Result;
use crate::model::{EncoderModel, ModelConfig};
use crate::params::ParamGroup;

/// Encoder parameters written out per kind, independent of the builders.
pub fn encoder_formula(cfg: &ModelConfig) -> usize {
    let e = &cfg.encoder;
    let d = cfg.d_model;
    let slots = match e.injection {
        Injection::Input => 1,
        Injection::All => cfg.blocks,
    };
    let h = e.flow_hidden.unwrap_or(2 * d);
    let theta = (d + 1) * h + h + h * d + d;
    match e.kind {
        EncoderKind::None | EncoderKind::Sinusoidal | EncoderKind::SinPerBlock => 0,
        EncoderKind::Table => slots * e.table_max_len * d,
        EncoderKind::Rnn => {
            let w0 = match e.rnn_input {
                RnnInput::Scalar => 1,
                RnnInput::Vectorized => d,
            };
            let first = w0 * d + d * d + 2 * d;
            first + (e.rnn_layers - 1) * (2 * d * d + 2 * d)
        }
        EncoderKind::Floater => theta + slots * d,
        EncoderKind::FloaterBias => theta + 3 * slots * d,
    }
}

/// Everything outside the encoder.
pub fn base_formula(cfg: &ModelConfig) -> usize {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let block = 4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d;
    cfg.vocab * d + cfg.blocks * block + d * cfg.out_vocab
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountCheck {
    pub encoder: EncoderKind,
    pub injection: Injection,
    pub blocks: usize,
    pub counted: usize,
    pub expected: usize,
    /// Encoder and flow scalars in the store.
    pub encoder_counted: usize,
    /// What the encoder reports about itself.
    pub encoder_reported: usize,
    pub encoder_expected: usize,
}

impl CountCheck {
    pub fn passes(&self) -> bool {
        self.counted == self.expected
            && self.encoder_counted == self.encoder_expected
            && self.encoder_reported == self.encoder_expected
    }
}

/// Builds the model and compares its stored scalars to the formulas.
pub fn count_check(cfg: &ModelConfig) -> Result<CountCheck> {
    let m = EncoderModel::new(cfg, 0)?;
    let encoder_counted = m.store.count(Some(ParamGroup::Encoder)) + m.store.count(Some(ParamGroup::Flow));
    let encoder_expected = encoder_formula(cfg);
    Ok(CountCheck {
        encoder: cfg.encoder.kind,
        injection: cfg.encoder.injection,
        blocks: cfg.blocks,
        counted: m.param_count(),
        expected: base_formula(cfg) + encoder_expected,
        encoder_counted,
        encoder_reported: m.encoder.param_count(),
        encoder_expected,
    })
}

/// Every encoder × injection at `cfg`'s size, then the flow encoders at
/// one to four blocks. The flag is true when every count matches.
pub fn paramcount_report(cfg: &ModelConfig) -> Result<(String, bool)> {
    let mut s = String::new();
    let mut ok = true;
    writeln!(
        s,
        "d = {}, d_ff = {}, blocks = {}, vocab = {}",
        cfg.d_model, cfg.d_ff, cfg.blocks, cfg.vocab
    )
    .unwrap();
    writeln!(s, "{:<14} {:<9} {:>6} {:>10} {:>10} verdict", "encoder", "injection", "blocks", "total", "encoder").unwrap();
    let mut line = |c: &CountCheck, s: &mut String| {
        let pass = c.passes();
        ok &= pass;
        writeln!(
            s,
            "{:<14} {:<9} {:>6} {:>10} {:>10} {}",
            c.encoder.name(),
            c.injection.name(),
            c.blocks,
            c.counted,
            c.encoder_counted,
            if pass {
                "ok".to_string()
            } else {
                format!("FAIL (expected {} / {})", c.expected, c.encoder_expected)
            }
        )
        .unwrap();
    };
    for kind in EncoderKind::ALL {
        for inj in [Injection::Input, Injection::All] {
            let mut c = cfg.clone();
            c.encoder.kind = kind;
            c.encoder.injection = inj;
            line(&count_check(&c)?, &mut s);
        }
    }
    writeln!(s, "flow encoders by block count (all blocks injected)").unwrap();
    for kind in [EncoderKind::Floater, EncoderKind::FloaterBias] {
        for blocks in 1..=4 {
            let mut c = cfg.clone();
            c.blocks = blocks;
            c.encoder.kind = kind;
            c.encoder.injection = Injection::All;
            line(&count_check(&c)?, &mut s);
        }
    }
    writeln!(s, "{}", if ok { "all counts match" } else { "some counts DIFFER" }).unwrap();
    Ok((s, ok))
}
