use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use floater::encoders::{EncoderKind, Injection};
use floater::harness::{
    checks, compare_encoders, encoding_matrices, eval_seed, evaluate_extrapolation, export_artifacts,
    paramcount_report, train, visualization_models, warm_start_from, warm_start_gap, write_file, Artifacts,
    MetricsRecord, RunConfig,
};
use floater::model::{Checkpoint, EncoderModel};
use floater::ode::{GradMode, Scheme};
use floater::Result;

#[derive(Parser)]
#[command(name = "floater", version, about = "Flow-based position encoders: checks, training and comparisons")]
struct Cli {
    #[command(flatten)]
    over: Overrides,
    #[command(subcommand)]
    cmd: Command,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Args)]
struct Overrides {
    /// Flat TOML file of run settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    encoder: Option<EncoderKind>,
    #[arg(long, global = true)]
    injection: Option<Injection>,
    #[arg(long, global = true)]
    solver: Option<Scheme>,
    #[arg(long, global = true)]
    substeps: Option<usize>,
    #[arg(long, global = true)]
    grad_mode: Option<GradMode>,
    /// Interval width between positions (default 0.1).
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Directory for written artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Gradients of every primitive and of the tiny flow model against finite differences.
    Gradcheck,
    /// Integrated sinusoidal field against the closed-form table.
    Equivalence,
    /// Train one model, evaluate the length bins and save it.
    Train {
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a saved model on the length bins.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every configured encoder row under one budget.
    Compare,
    /// Write encoding heatmap CSVs.
    Export {
        /// Export this model instead of freshly built encoders.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sequence length (default: the longest evaluation length).
        #[arg(long)]
        len: Option<usize>,
    },
    /// Parameter counts against closed-form formulas.
    Paramcount,
    /// Copy a trained model into a flow model and compare their losses.
    Warmstart { donor: PathBuf, target: PathBuf },
}

fn resolve(o: &Overrides) -> Result<RunConfig> {
    let mut c = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.encoder {
        c.encoder = v;
    }
    if let Some(v) = o.injection {
        c.injection = v;
    }
    if let Some(v) = o.solver {
        c.solver = v;
    }
    if let Some(v) = o.substeps {
        c.substeps = v;
    }
    if let Some(v) = o.grad_mode {
        c.grad_mode = v;
    }
    if let Some(v) = o.delta {
        c.delta = v;
    }
    c.validate()?;
    Ok(c)
}

/// Prints `text` and writes it under `--out` when given.
fn emit(out: Option<&Path>, file: &str, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out {
        write_file(&dir.join(file), text)?;
    }
    Ok(())
}

fn summary(rec: &MetricsRecord) -> String {
    let mut s = format!("{}:{} params {}", rec.encoder, rec.injection, rec.param_count);
    if let Some(e) = rec.epochs.last() {
        s.push_str(&format!(" final epoch loss {:.6}", e.loss));
    }
    if let Some(a) = rec.train_accuracy {
        s.push_str(&format!(" train accuracy {a:.4}"));
    }
    s.push('\n');
    for b in &rec.bins {
        s.push_str(&format!("  {:<9} {}\n", b.label(), b.cell()));
    }
    s
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli.over)?;
    let out = cli.over.out.as_deref();
    match cli.cmd {
        Command::Gradcheck => {
            let (text, ok) = checks::gradcheck_report(cfg.seed)?;
            emit(out, "gradcheck.txt", &text)?;
            Ok(ok)
        }
        Command::Equivalence => {
            let substeps = cli.over.substeps;
            let (text, ok) = checks::equivalence_report(cfg.solver, substeps)?;
            emit(out, "equivalence.txt", &text)?;
            Ok(ok)
        }
        Command::Train { checkpoint } => {
            let mut model = match checkpoint {
                Some(p) => EncoderModel::from_checkpoint(&Checkpoint::load(p)?)?,
                None => EncoderModel::new(&cfg.model_config()?, cfg.seed)?,
            };
            let task = cfg.task_spec();
            let mut rec = train(&mut model, &task, &cfg.train_config())?;
            rec.bins = evaluate_extrapolation(&model, &task, &task.bins, cfg.eval_per_bin, eval_seed(cfg.seed));
            print!("{}", summary(&rec));
            if let Some(dir) = out {
                model.checkpoint().save(dir.join("model.ckpt"))?;
                write_file(&dir.join("config.toml"), &cfg.to_toml())?;
                export_artifacts(
                    dir,
                    &Artifacts {
                        models: vec![&model],
                        len: task.max_len(),
                        metrics: vec![&rec],
                        reports: vec![("summary".into(), summary(&rec))],
                    },
                )?;
            }
            Ok(true)
        }
        Command::Eval { checkpoint } => {
            let model = EncoderModel::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
            let task = cfg.task_spec();
            let mut rec = MetricsRecord::for_model(&model);
            rec.bins = evaluate_extrapolation(&model, &task, &task.bins, cfg.eval_per_bin, eval_seed(cfg.seed));
            print!("{}", summary(&rec));
            if let Some(dir) = out {
                write_file(&dir.join("metrics.jsonl"), &rec.to_jsonl())?;
            }
            Ok(true)
        }
        Command::Compare => {
            let (report, records) = compare_encoders(&cfg)?;
            let table = report.to_table();
            print!("{table}");
            if let Some(dir) = out {
                write_file(&dir.join("config.toml"), &cfg.to_toml())?;
                export_artifacts(
                    dir,
                    &Artifacts {
                        metrics: records.iter().flatten().collect(),
                        reports: vec![("report".into(), table)],
                        ..Artifacts::default()
                    },
                )?;
                write_file(&dir.join("report.jsonl"), &report.to_jsonl())?;
            }
            Ok(report.rows.iter().all(|r| r.error.is_none()))
        }
        Command::Export { checkpoint, len } => {
            let len = len.unwrap_or_else(|| cfg.task_spec().max_len());
            let models = match checkpoint {
                Some(p) => vec![EncoderModel::from_checkpoint(&Checkpoint::load(p)?)?],
                None => visualization_models(&cfg.model_config()?, cfg.seed)?,
            };
            match out {
                Some(dir) => {
                    let art = Artifacts {
                        models: models.iter().collect(),
                        len,
                        ..Artifacts::default()
                    };
                    for p in export_artifacts(dir, &art)? {
                        println!("{}", p.display());
                    }
                }
                None => {
                    for m in &models {
                        for (name, t) in encoding_matrices(m, len)? {
                            println!("{name}: {} x {}", t.rows(), t.cols());
                        }
                    }
                }
            }
            Ok(true)
        }
        Command::Paramcount => {
            let (text, ok) = paramcount_report(&cfg.model_config()?)?;
            emit(out, "paramcount.txt", &text)?;
            Ok(ok)
        }
        Command::Warmstart { donor, target } => {
            let ck = Checkpoint::load(&donor)?;
            let kind = cli.over.encoder.unwrap_or(EncoderKind::FloaterBias);
            let injection = cli.over.injection.unwrap_or(Injection::All);
            let donor_model = EncoderModel::from_checkpoint(&ck)?;
            let warm = warm_start_from(&ck, kind, injection, cfg.seed)?;
            let report = warm_start_gap(&donor_model, &warm, &cfg.task_spec(), cfg.batch_size, cfg.seed)?;
            warm.checkpoint().save(&target)?;
            emit(out, "warmstart.txt", &report.summary())?;
            Ok(report.passes())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
