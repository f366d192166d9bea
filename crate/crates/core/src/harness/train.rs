//! Adam training with warmup and inverse-square-root decay.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::BinMetric;
use super::tasks::{generate_batch, TaskSpec};
use crate::error::{Error, Result};
use crate::model::EncoderModel;
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::seed::derive;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Multiplier on the learning rate of flow parameters.
    pub flow_lr_mult: f64,
    /// Flow parameters are updated every `flow_update_every` steps.
    pub flow_update_every: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Halves the peak learning rate (for warm-started runs).
    pub halve_lr: bool,
    /// Held-out training-length examples scored after the last step.
    pub final_eval_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-3,
            warmup: 20,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            flow_lr_mult: 10.0,
            flow_update_every: 1,
            epochs: 10,
            steps_per_epoch: 20,
            batch_size: 16,
            seed: 0,
            halve_lr: false,
            final_eval_examples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(format!("learning rate must be finite and ≥ 0, got {}", self.lr)));
        }
        if self.flow_update_every == 0 || self.batch_size == 0 {
            return Err(Error::contract("flow_update_every and batch_size must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }

    /// Learning rate at 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let peak = if self.halve_lr { 0.5 * self.lr } else { self.lr };
        if self.warmup == 0 {
            return peak;
        }
        let s = step.max(1) as f64;
        let w = self.warmup as f64;
        peak * (s / w).min((w / s).sqrt())
    }
}

/// Adam moments per parameter, with a per-parameter step counter so that
/// parameters updated on a sparser schedule keep correct bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<i32>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: store.ids().map(|id| vec![0.0; store.get(id).len()]).collect(),
            v: store.ids().map(|id| vec![0.0; store.get(id).len()]).collect(),
            t: vec![0; store.len()],
        }
    }

    /// One update of `id` from its accumulated gradient (treated as 0 when absent).
    pub fn step(&mut self, store: &mut ParamStore, id: ParamId, lr: f64) {
        let i = id.index();
        self.t[i] += 1;
        let t = self.t[i];
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let g = store.get(id).grad().map(<[f64]>::to_vec);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        let p = store.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = g.as_ref().map_or(0.0, |g| g[k]);
            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Append-only log of a run.
///
/// Equality ignores the wall-clock time, which is also left out of
/// serialized output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub encoder: String,
    pub injection: String,
    pub param_count: usize,
    pub encoder_param_count: usize,
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochMetrics>,
    /// Accuracy on fresh training-length data after the last step.
    pub train_accuracy: Option<f64>,
    pub bins: Vec<BinMetric>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl PartialEq for MetricsRecord {
    fn eq(&self, o: &Self) -> bool {
        self.encoder == o.encoder
            && self.injection == o.injection
            && self.param_count == o.param_count
            && self.encoder_param_count == o.encoder_param_count
            && self.steps == o.steps
            && self.epochs == o.epochs
            && self.train_accuracy == o.train_accuracy
            && self.bins == o.bins
    }
}

impl MetricsRecord {
    pub fn for_model(model: &EncoderModel) -> Self {
        MetricsRecord {
            encoder: model.encoder.kind().to_string(),
            injection: model.injection().to_string(),
            param_count: model.param_count(),
            encoder_param_count: model.encoder.param_count(),
            steps: Vec::new(),
            epochs: Vec::new(),
            train_accuracy: None,
            bins: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    /// One JSON object per line: steps, then epochs, then bins, then a summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |kind: &str, v: serde_json::Value| {
            let mut obj = serde_json::Map::new();
            obj.insert("record".into(), kind.into());
            obj.insert("encoder".into(), self.encoder.clone().into());
            obj.insert("injection".into(), self.injection.clone().into());
            if let serde_json::Value::Object(m) = v {
                obj.extend(m);
            }
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        };
        for s in &self.steps {
            push("step", serde_json::to_value(s).expect("plain struct"));
        }
        for e in &self.epochs {
            push("epoch", serde_json::to_value(e).expect("plain struct"));
        }
        for b in &self.bins {
            push("bin", serde_json::to_value(b).expect("plain struct"));
        }
        push(
            "summary",
            serde_json::json!({
                "param_count": self.param_count,
                "encoder_param_count": self.encoder_param_count,
                "train_accuracy": self.train_accuracy,
            }),
        );
        out
    }
}

fn divergence(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric(_) => Error::Divergence {
            step,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains `model` in place on freshly sampled batches and returns the log.
pub fn train(model: &mut EncoderModel, task: &TaskSpec, cfg: &TrainConfig) -> Result<MetricsRecord> {
    cfg.validate()?;
    task.validate()?;
    if task.out_vocab() != model.cfg.out_vocab {
        return Err(Error::contract(format!(
            "task needs {} output classes, model head has {}",
            task.out_vocab(),
            model.cfg.out_vocab
        )));
    }
    let start = Instant::now();
    let mut rec = MetricsRecord::for_model(model);
    let mut adam = Adam::new(&model.store, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let has_flow = model.encoder.flow().is_some();
    let groups: Vec<(ParamId, ParamGroup)> = model.store.iter().map(|(id, _, _, g)| (id, g)).collect();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut correct, mut total) = (0.0, 0, 0);
        for _ in 0..cfg.steps_per_epoch {
            step += 1;
            let batch = generate_batch(task, cfg.batch_size, derive(cfg.seed, step as u64))?;
            let update_flow = step % cfg.flow_update_every == 0;
            model.store.zero_grad();
            let stats = model
                .loss_and_grad(&batch, has_flow && update_flow)
                .map_err(|e| divergence(step, e))?;
            if !stats.loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss: stats.loss,
                });
            }
            let lr = cfg.lr_at(step);
            for &(id, g) in &groups {
                match g {
                    ParamGroup::Flow if !update_flow => {}
                    ParamGroup::Flow => adam.step(&mut model.store, id, lr * cfg.flow_lr_mult),
                    _ => adam.step(&mut model.store, id, lr),
                }
            }
            rec.steps.push(StepMetrics {
                step,
                loss: stats.loss,
                accuracy: stats.accuracy(),
                lr,
            });
            loss_sum += stats.loss;
            correct += stats.correct;
            total += stats.total;
        }
        if cfg.steps_per_epoch > 0 {
            rec.epochs.push(EpochMetrics {
                epoch,
                loss: loss_sum / cfg.steps_per_epoch as f64,
                accuracy: correct as f64 / total.max(1) as f64,
            });
        }
    }
    model.store.zero_grad();
    if cfg.final_eval_examples > 0 {
        let held = generate_batch(task, cfg.final_eval_examples, derive(cfg.seed, u64::MAX - 1))?;
        rec.train_accuracy = Some(model.evaluate(&held)?.accuracy());
    }
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderConfig, EncoderKind, Injection};
    use crate::harness::tasks::TaskKind;
    use crate::model::ModelConfig;

    fn setup(kind: EncoderKind) -> (EncoderModel, TaskSpec, TrainConfig) {
        let task = TaskSpec {
            kind: TaskKind::PositionalParity,
            vocab: 6,
            min_len: 3,
            train_len: 6,
            bins: vec![(7, 9)],
            shift: 1,
        };
        let cfg = ModelConfig {
            vocab: 6,
            out_vocab: 2,
            d_model: 8,
            d_ff: 16,
            blocks: 1,
            heads: 2,
            embed_std: 1.0,
            encoder: EncoderConfig::new(kind, Injection::Input),
        };
        let tc = TrainConfig {
            epochs: 2,
            steps_per_epoch: 3,
            batch_size: 4,
            final_eval_examples: 8,
            ..TrainConfig::default()
        };
        (EncoderModel::new(&cfg, 1).unwrap(), task, tc)
    }

    #[test]
    fn schedule_shape() {
        let c = TrainConfig {
            lr: 1.0,
            warmup: 4,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(1), 0.25);
        assert_eq!(c.lr_at(4), 1.0);
        assert_eq!(c.lr_at(16), 0.5);
        let h = TrainConfig { halve_lr: true, ..c };
        assert_eq!(h.lr_at(4), 0.5);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let (mut m, task, mut tc) = setup(EncoderKind::Floater);
        tc.lr = 0.0;
        let before = m.checkpoint();
        let rec = train(&mut m, &task, &tc).unwrap();
        assert_eq!(m.checkpoint(), before);
        let l0 = rec.epochs[0].loss;
        assert!(rec.epochs.iter().all(|e| e.loss.is_finite()));
        assert!(l0 > 0.0);
    }

    #[test]
    fn runs_are_reproducible() {
        let (mut a, task, tc) = setup(EncoderKind::Floater);
        let (mut b, _, _) = setup(EncoderKind::Floater);
        let ra = train(&mut a, &task, &tc).unwrap();
        let rb = train(&mut b, &task, &tc).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra.to_jsonl(), rb.to_jsonl());
        assert_eq!(a.checkpoint(), b.checkpoint());
        assert_eq!(ra.steps.len(), 6);
    }

    #[test]
    fn flow_updates_follow_the_schedule() {
        let (mut m, task, mut tc) = setup(EncoderKind::Floater);
        tc.flow_update_every = 100;
        let flow = m.flow_ids();
        let before: Vec<_> = flow.iter().map(|&id| m.store.get(id).clone()).collect();
        train(&mut m, &task, &tc).unwrap();
        for (id, t) in flow.iter().zip(&before) {
            assert!(m.store.get(*id).bitwise_eq(t));
        }
    }

    #[test]
    fn divergence_names_the_step() {
        let (mut m, task, mut tc) = setup(EncoderKind::Sinusoidal);
        tc.lr = 1e300;
        tc.warmup = 0;
        match train(&mut m, &task, &tc) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
