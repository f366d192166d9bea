//! Warm-starting a flow model from a trained model and measuring the jump.

use serde::{Deserialize, Serialize};

use super::tasks::{generate_batch, TaskSpec};
use crate::encoders::{EncoderKind, Injection};
use crate::error::{Error, Result};
use crate::model::{warm_start, Checkpoint, EncoderModel};
use crate::seed::derive;

pub const WARM_START_TOLERANCE: f64 = 1e-3;

/// Builds a bias-form flow model with the donor's architecture and copies
/// the donor into it. The additive form is refused: its zeroed initial
/// vectors would replace the donor's sinusoid rather than extend it.
pub fn warm_start_from(donor: &Checkpoint, kind: EncoderKind, injection: Injection, seed: u64) -> Result<EncoderModel> {
    if kind != EncoderKind::FloaterBias {
        return Err(Error::contract(format!("warm start needs the floater-bias encoder, got {kind}")));
    }
    let mut cfg = donor.config.clone();
    cfg.encoder.kind = kind;
    cfg.encoder.injection = injection;
    let target = EncoderModel::new(&cfg, seed)?;
    warm_start(donor, target, derive(seed, 0x5741_524d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmStartReport {
    pub donor_loss: f64,
    pub target_loss: f64,
    pub gap: f64,
}

impl WarmStartReport {
    pub fn passes(&self) -> bool {
        self.gap <= WARM_START_TOLERANCE
    }

    pub fn summary(&self) -> String {
        format!(
            "donor loss {:.9}\nwarm-started loss {:.9}\ngap {:.3e} ({} {WARM_START_TOLERANCE:e})\n",
            self.donor_loss,
            self.target_loss,
            self.gap,
            if self.passes() { "<=" } else { ">" }
        )
    }
}

/// Losses of both models on the batch a training run seeded with `seed`
/// would see at its first step.
pub fn warm_start_gap(
    donor: &EncoderModel,
    target: &EncoderModel,
    task: &TaskSpec,
    batch_size: usize,
    seed: u64,
) -> Result<WarmStartReport> {
    let batch = generate_batch(task, batch_size, derive(seed, 1))?;
    let donor_loss = donor.loss(&batch)?;
    let target_loss = target.loss(&batch)?;
    Ok(WarmStartReport {
        donor_loss,
        target_loss,
        gap: (donor_loss - target_loss).abs(),
    })
}
