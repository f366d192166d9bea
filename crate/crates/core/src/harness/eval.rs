//! Short-to-long evaluation over length bins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tasks::TaskSpec;
use crate::error::Error;
use crate::model::EncoderModel;
use crate::seed::derive;

/// Accuracy on one inclusive length range, or the reason it could not be measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMetric {
    pub lo: usize,
    pub hi: usize,
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    pub failure: Option<String>,
}

impl BinMetric {
    pub fn label(&self) -> String {
        format!("[{},{}]", self.lo, self.hi)
    }

    /// Accuracy as text, `capacity` or `error` markers otherwise.
    pub fn cell(&self) -> String {
        match (self.accuracy, &self.failure) {
            (Some(a), _) => format!("{a:.3}"),
            (None, Some(f)) if f.starts_with("capacity") => "capacity".into(),
            _ => "error".into(),
        }
    }
}

/// Token accuracy per bin on `per_bin` fresh examples per bin. Failures are
/// recorded in the bin, never returned.
pub fn evaluate_extrapolation(
    model: &EncoderModel,
    task: &TaskSpec,
    bins: &[(usize, usize)],
    per_bin: usize,
    seed: u64,
) -> Vec<BinMetric> {
    bins.iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, i as u64));
            let batch = task.generate(per_bin.max(1), lo, hi, &mut rng);
            match model.evaluate(&batch) {
                Ok(s) => BinMetric {
                    lo,
                    hi,
                    accuracy: Some(s.accuracy()),
                    loss: Some(s.loss),
                    failure: None,
                },
                Err(e) => BinMetric {
                    lo,
                    hi,
                    accuracy: None,
                    loss: None,
                    failure: Some(match e {
                        Error::Capacity { requested, max } => {
                            format!("capacity: length {requested} exceeds {max}")
                        }
                        other => other.to_string(),
                    }),
                },
            }
        })
        .collect()
}
