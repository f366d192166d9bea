//! Encoder × injection comparison under a shared budget.

use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RowSpec, RunConfig};
use super::eval::{evaluate_extrapolation, BinMetric};
use super::train::{train, MetricsRecord};
use crate::error::Result;
use crate::model::EncoderModel;
use crate::seed::derive;

/// Seed of the evaluation data, shared by every row.
pub fn eval_seed(master: u64) -> u64 {
    derive(master, u64::MAX - 2)
}

/// Model for row `index`: base parameters and batches come from the
/// master seed so rows differ only in encoder parameters, which are drawn
/// from `derive(master, index)`.
pub fn row_model(cfg: &RunConfig, index: usize) -> Result<EncoderModel> {
    EncoderModel::with_seeds(&cfg.model_config()?, cfg.seed, derive(cfg.seed, index as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub index: usize,
    pub label: String,
    pub param_count: Option<usize>,
    pub encoder_param_count: Option<usize>,
    pub train_accuracy: Option<f64>,
    pub final_loss: Option<f64>,
    pub bins: Vec<BinMetric>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub bins: Vec<(usize, usize)>,
    pub rows: Vec<CompareRow>,
}

/// Trains and evaluates one row, recording any failure in the row.
pub fn run_row(cfg: &RunConfig, index: usize, row: &RowSpec) -> (CompareRow, Option<MetricsRecord>) {
    let rc = cfg.for_row(row);
    let mut out = CompareRow {
        index,
        label: row.label(),
        param_count: None,
        encoder_param_count: None,
        train_accuracy: None,
        final_loss: None,
        bins: Vec::new(),
        error: None,
    };
    let mut model = match row_model(&rc, index) {
        Ok(m) => m,
        Err(e) => {
            out.error = Some(e.to_string());
            return (out, None);
        }
    };
    out.param_count = Some(model.param_count());
    out.encoder_param_count = Some(model.encoder.param_count());
    let task = rc.task_spec();
    match train(&mut model, &task, &rc.train_config()) {
        Ok(mut rec) => {
            rec.bins = evaluate_extrapolation(&model, &task, &task.bins, rc.eval_per_bin, eval_seed(rc.seed));
            out.train_accuracy = rec.train_accuracy;
            out.final_loss = rec.steps.last().map(|s| s.loss);
            out.bins = rec.bins.clone();
            (out, Some(rec))
        }
        Err(e) => {
            out.error = Some(e.to_string());
            (out, None)
        }
    }
}

/// Runs every configured row. Rows execute in parallel; the report is
/// ordered by row index.
pub fn compare_encoders(cfg: &RunConfig) -> Result<(CompareReport, Vec<Option<MetricsRecord>>)> {
    cfg.validate()?;
    let rows = cfg.row_specs()?;
    let results: Vec<_> = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| run_row(cfg, i, r))
        .collect();
    let (rows, records) = results.into_iter().unzip();
    Ok((
        CompareReport {
            seed: cfg.seed,
            bins: cfg.bins.clone(),
            rows,
        },
        records,
    ))
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".into(), |a| format!("{a:.3}"))
}

impl CompareReport {
    /// Fixed-width text table, one row per configuration.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        write!(s, "{:<26} {:>9} {:>8} {:>7}", "encoder:injection", "params", "encoder", "train").unwrap();
        for &(lo, hi) in &self.bins {
            write!(s, " {:>9}", format!("[{lo},{hi}]")).unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            let count = |c: Option<usize>| c.map_or("-".into(), |c| c.to_string());
            write!(
                s,
                "{:<26} {:>9} {:>8} {:>7}",
                r.label,
                count(r.param_count),
                count(r.encoder_param_count),
                cell(r.train_accuracy)
            )
            .unwrap();
            if let Some(e) = &r.error {
                write!(s, " error: {e}").unwrap();
            } else {
                for b in &r.bins {
                    write!(s, " {:>9}", b.cell()).unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    /// One JSON object per row.
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain struct") + "\n")
            .collect()
    }
}
