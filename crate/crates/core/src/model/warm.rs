//! Initializing a flow model from a trained model without position flow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Checkpoint, EncoderModel};
use crate::error::{Error, Result};
use crate::params::ParamGroup;
use crate::tensor::Tensor;

/// Copies every embedding, attention, feed-forward, norm and head tensor
/// of `donor` into `target`, redraws the flow dynamics weights at the
/// configured small scale (biases 0) and zeroes the flow initial vectors.
///
/// Fails with the names of all tensors that are missing from the donor or
/// have a different shape.
pub fn warm_start(donor: &Checkpoint, mut target: EncoderModel, seed: u64) -> Result<EncoderModel> {
    let mut bad = Vec::new();
    if donor.config.heads != target.cfg.heads {
        bad.push(format!("heads ({} vs {})", donor.config.heads, target.cfg.heads));
    }
    let base: Vec<_> = target
        .store
        .iter()
        .filter(|(_, _, _, g)| *g == ParamGroup::Base)
        .map(|(id, name, t, _)| (id, name.to_string(), t.shape().to_vec()))
        .collect();
    for (_, name, shape) in &base {
        match donor.get(name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => bad.push(format!("{name} ({:?} vs {:?})", t.shape(), shape)),
            None => bad.push(format!("{name} (missing)")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Surgery(bad));
    }
    for (id, name, _) in &base {
        target.store.set(*id, donor.get(name).expect("checked"))?;
    }
    if let Some(state) = target.encoder.flow() {
        let std = target.cfg.encoder.dynamics_std;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w_a, b_a, w_b, b_b] = state.dynamics;
        let fresh = [
            (w_a, Tensor::randn(target.store.get(w_a).shape(), std, &mut rng)),
            (b_a, Tensor::zeros(target.store.get(b_a).shape())),
            (w_b, Tensor::randn(target.store.get(w_b).shape(), std, &mut rng)),
            (b_b, Tensor::zeros(target.store.get(b_b).shape())),
        ];
        for (id, t) in fresh {
            target.store.set(id, &t)?;
        }
        target.zero_initial_vectors();
    }
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{EncoderConfig, EncoderKind, Injection};
    use crate::model::ModelConfig;

    fn cfg(kind: EncoderKind, d: usize) -> ModelConfig {
        ModelConfig {
            vocab: 9,
            out_vocab: 4,
            d_model: d,
            d_ff: 16,
            blocks: 2,
            heads: 2,
            embed_std: 1.0,
            encoder: EncoderConfig::new(kind, Injection::All),
        }
    }

    #[test]
    fn zero_dynamics_after_surgery_reproduce_donor() {
        let mut icfg = cfg(EncoderKind::Sinusoidal, 8);
        icfg.encoder.injection = Injection::Input;
        let donor = EncoderModel::new(&icfg, 3).unwrap();
        let target = EncoderModel::new(&cfg(EncoderKind::FloaterBias, 8), 99).unwrap();
        let mut w = warm_start(&donor.checkpoint(), target, 5).unwrap();
        let x = [1, 4, 2, 8, 5, 7];
        let near = w.encode(&x).unwrap().max_abs_diff(&donor.encode(&x).unwrap());
        assert!(near > 0.0 && near < 1e-2, "{near}");
        w.zero_dynamics();
        assert!(w.encode(&x).unwrap().bitwise_eq(&donor.encode(&x).unwrap()));
    }

    #[test]
    fn shape_mismatch_lists_tensor_names() {
        let donor = EncoderModel::new(&cfg(EncoderKind::Sinusoidal, 8), 3).unwrap();
        let target = EncoderModel::new(&cfg(EncoderKind::FloaterBias, 6), 3).unwrap();
        match warm_start(&donor.checkpoint(), target, 0) {
            Err(Error::Surgery(names)) => {
                assert!(names.iter().any(|n| n.starts_with("embed")));
                assert!(names.iter().any(|n| n.starts_with("block2.w_q")));
            }
            other => panic!("expected surgery error, got {other:?}"),
        }
    }
}
