//! Experiment driver: tasks, training, evaluation, comparisons and export.

mod accounting;
pub mod checks;
mod compare;
mod config;
mod eval;
mod export;
mod tasks;
mod train;
mod warm;

pub use accounting::{base_formula, count_check, encoder_formula, paramcount_report, CountCheck};
pub use compare::{compare_encoders, eval_seed, row_model, run_row, CompareReport, CompareRow};
pub use config::{RowSpec, RunConfig};
pub use eval::{evaluate_extrapolation, BinMetric};
pub use export::{encoding_matrices, export_artifacts, tensor_csv, visualization_models, write_file, Artifacts};
pub use tasks::{generate_batch, TaskKind, TaskSpec};
pub use train::{train, Adam, EpochMetrics, MetricsRecord, StepMetrics, TrainConfig};
pub use warm::{warm_start_from, warm_start_gap, WarmStartReport, WARM_START_TOLERANCE};
