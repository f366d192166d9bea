//! Plain-file artifacts: encoding CSVs, metric logs and text reports.

use std::path::{Path, PathBuf};

use super::train::MetricsRecord;
use crate::encoders::{EncoderKind, PositionEncoder};
use crate::error::{Error, Result};
use crate::model::EncoderModel;
use crate::tensor::Tensor;

/// Row per position, column per dimension, shortest round-trip decimals.
pub fn tensor_csv(t: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Writes `contents`, creating parent directories. Errors carry the path.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Named `L × d` matrices of every position signal in `model`: additive
/// encodings per block, then bias trajectories. A learned table is cut
/// to its capacity.
pub fn encoding_matrices(model: &EncoderModel, len: usize) -> Result<Vec<(String, Tensor)>> {
    let kind = model.encoder.kind();
    let len = match &model.encoder {
        PositionEncoder::LearnedTable(t) => len.min(t.first().map_or(len, |t| t.max_len)),
        _ => len,
    };
    let mut out = Vec::new();
    for n in 1..=model.cfg.blocks {
        if let Some(e) = model.block_encoding(len, n)? {
            out.push((format!("{kind}.block{n}"), e));
        }
        if let Some(b) = model.block_bias(len, n)? {
            for (p, t) in ["q", "k", "v"].into_iter().zip(b) {
                out.push((format!("{kind}.block{n}.bias_{p}"), t));
            }
        }
    }
    Ok(out)
}

/// What [`export_artifacts`] writes.
#[derive(Default)]
pub struct Artifacts<'a> {
    /// Models whose encodings go to `encodings/<name>.csv`.
    pub models: Vec<&'a EncoderModel>,
    /// Sequence length of the exported encodings.
    pub len: usize,
    /// Concatenated into `metrics.jsonl`.
    pub metrics: Vec<&'a MetricsRecord>,
    /// `(stem, text)` pairs written to `<stem>.txt`.
    pub reports: Vec<(String, String)>,
}

/// Writes every artifact under `dir` and returns the paths in write order.
pub fn export_artifacts(dir: &Path, a: &Artifacts) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: &str| -> Result<()> {
        write_file(&path, text)?;
        written.push(path);
        Ok(())
    };
    for m in &a.models {
        for (name, t) in encoding_matrices(m, a.len)? {
            put(dir.join("encodings").join(format!("{name}.csv")), &tensor_csv(&t))?;
        }
    }
    if !a.metrics.is_empty() {
        let text: String = a.metrics.iter().map(|r| r.to_jsonl()).collect();
        put(dir.join("metrics.jsonl"), &text)?;
    }
    for (stem, text) in &a.reports {
        put(dir.join(format!("{stem}.txt")), text)?;
    }
    Ok(written)
}

/// The four encoders of the visualization, freshly constructed from `cfg`
/// with `seed`, each injected at every block.
pub fn visualization_models(cfg: &crate::model::ModelConfig, seed: u64) -> Result<Vec<EncoderModel>> {
    [EncoderKind::Sinusoidal, EncoderKind::Table, EncoderKind::Rnn, EncoderKind::Floater]
        .into_iter()
        .map(|kind| {
            let mut c = cfg.clone();
            c.encoder.kind = kind;
            c.encoder.injection = crate::encoders::Injection::All;
            EncoderModel::new(&c, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderConfig, Injection};
    use crate::model::ModelConfig;

    fn cfg(kind: EncoderKind) -> ModelConfig {
        ModelConfig {
            vocab: 6,
            out_vocab: 2,
            d_model: 8,
            d_ff: 16,
            blocks: 2,
            heads: 2,
            embed_std: 0.1,
            encoder: EncoderConfig::new(kind, Injection::All),
        }
    }

    #[test]
    fn sinusoidal_csv_shape_and_first_row() {
        let m = EncoderModel::new(&cfg(EncoderKind::Sinusoidal), 1).unwrap();
        let mats = encoding_matrices(&m, 12).unwrap();
        assert_eq!(mats.len(), 2);
        let csv = tensor_csv(&mats[0].1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[0], "0,1,0,1,0,1,0,1");
        assert!(lines.iter().all(|l| l.split(',').count() == 8));
        let back: Vec<f64> = lines[5].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(back, mats[0].1.row(5));
    }

    #[test]
    fn bias_mode_exports_three_trajectories_per_block() {
        let m = EncoderModel::new(&cfg(EncoderKind::FloaterBias), 1).unwrap();
        let names: Vec<String> = encoding_matrices(&m, 5).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(
            names,
            [
                "floater-bias.block1",
                "floater-bias.block1.bias_q",
                "floater-bias.block1.bias_k",
                "floater-bias.block1.bias_v",
                "floater-bias.block2.bias_q",
                "floater-bias.block2.bias_k",
                "floater-bias.block2.bias_v"
            ]
        );
    }

    #[test]
    fn re_export_is_identical_and_errors_name_the_path() {
        let models = visualization_models(&cfg(EncoderKind::None), 3).unwrap();
        let art = Artifacts {
            models: models.iter().collect(),
            len: 30,
            reports: vec![("note".into(), "hello\n".into())],
            ..Artifacts::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = export_artifacts(a.path(), &art).unwrap();
        let pb = export_artifacts(b.path(), &art).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let table = std::fs::read_to_string(a.path().join("encodings/table.block1.csv")).unwrap();
        assert_eq!(table.lines().count(), 20);

        let blocker = a.path().join("note.txt");
        let err = export_artifacts(&blocker, &art).unwrap_err();
        assert!(err.to_string().contains("note.txt"), "{err}");
    }
}
