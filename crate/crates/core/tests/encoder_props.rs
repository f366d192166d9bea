use floater::encoders::{
    floater_bias, floater_encode, rnn_encode, sinusoidal, table_lookup, EncoderConfig, EncoderKind, FloaterMode,
    FloaterState, Injection, PositionEncoder, RnnEncoder, RnnInput, SinusoidalSpec,
};
use floater::ode::{GradMode, Scheme, SolverConfig};
use floater::params::ParamStore;
use floater::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const L_TRAIN: usize = 20;

fn flow(mode: FloaterMode, slots: usize, seed: u64) -> (ParamStore, FloaterState) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SolverConfig::new(Scheme::Rk4, 5, GradMode::Adjoint).unwrap();
    let s = FloaterState::new(&mut store, 8, 16, slots, mode, cfg, 0.1, 0.3, &mut rng).unwrap();
    (store, s)
}

fn rnn(layers: usize, input: RnnInput, seed: u64) -> (ParamStore, RnnEncoder) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = RnnEncoder::new(&mut store, 8, layers, input, 0.1, 0.3, &mut rng).unwrap();
    (store, r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn floater_rows_are_causal(seed in any::<u64>(), len in 1usize..40, cut in 1usize..40, block in 1usize..=3) {
        let k = cut.min(len);
        let (store, s) = flow(FloaterMode::Additive, 3, seed);
        let long = floater_encode(&s, &store, len, block).unwrap();
        s.clear_cache();
        let short = floater_encode(&s, &store, k, block).unwrap();
        prop_assert!(long.take_rows(k).unwrap().bitwise_eq(&short));
    }

    #[test]
    fn bias_rows_are_causal_and_cache_is_transparent(seed in any::<u64>(), len in 1usize..30, cut in 1usize..30) {
        let k = cut.min(len);
        let (store, s) = flow(FloaterMode::Bias, 2, seed);
        let cached = floater_bias(&s, &store, len, 2).unwrap();
        let again = floater_bias(&s, &store, len, 2).unwrap();
        s.clear_cache();
        let short = floater_bias(&s, &store, k, 2).unwrap();
        for p in 0..3 {
            prop_assert!(cached[p].bitwise_eq(&again[p]));
            prop_assert!(cached[p].take_rows(k).unwrap().bitwise_eq(&short[p]));
        }
    }

    #[test]
    fn rnn_rows_are_causal(seed in any::<u64>(), len in 1usize..40, cut in 1usize..40, two in any::<bool>(), vector in any::<bool>()) {
        let k = cut.min(len);
        let input = if vector { RnnInput::Vectorized } else { RnnInput::Scalar };
        let (store, r) = rnn(if two { 2 } else { 1 }, input, seed);
        let long = rnn_encode(&r, &store, len).unwrap();
        prop_assert!(long.take_rows(k).unwrap().bitwise_eq(&rnn_encode(&r, &store, k).unwrap()));
    }
}

#[test]
fn inductive_encoders_reach_four_times_training_length() {
    let len = 4 * L_TRAIN;
    let spec = SinusoidalSpec::new(8).unwrap();
    let s = sinusoidal(len, &spec);
    assert_eq!(s.dims2(), (len, 8));
    assert!(s.is_finite());

    let (store, r) = rnn(2, RnnInput::Scalar, 1);
    let e = rnn_encode(&r, &store, len).unwrap();
    assert_eq!(e.dims2(), (len, 8));
    assert!(e.is_finite());

    let (store, f) = flow(FloaterMode::Additive, 2, 1);
    for block in 1..=2 {
        let e = floater_encode(&f, &store, len, block).unwrap();
        assert_eq!(e.dims2(), (len, 8));
        assert!(e.is_finite());
    }
}

#[test]
fn learned_table_stops_at_capacity() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cfg = EncoderConfig::new(EncoderKind::Table, Injection::Input);
    cfg.table_max_len = L_TRAIN;
    let enc = PositionEncoder::build(&cfg, 8, 2, &mut store, &mut rng).unwrap();
    let PositionEncoder::LearnedTable(t) = &enc else { panic!("table") };
    assert_eq!(table_lookup(&t[0], &store, L_TRAIN).unwrap().rows(), L_TRAIN);
    for len in [L_TRAIN + 1, 4 * L_TRAIN] {
        match table_lookup(&t[0], &store, len) {
            Err(Error::Capacity { requested, max }) => assert_eq!((requested, max), (len, L_TRAIN)),
            other => panic!("expected capacity error, got {other:?}"),
        }
    }
}

#[test]
fn one_dynamics_tensor_set_serves_every_block() {
    for (mode, slots) in [(FloaterMode::Additive, 4), (FloaterMode::Bias, 3)] {
        let (store, s) = flow(mode, slots, 9);
        let names: Vec<&str> = store.iter().map(|(_, n, _, _)| n).collect();
        for t in ["flow.w_a", "flow.b_a", "flow.w_b", "flow.b_b"] {
            assert_eq!(names.iter().filter(|n| **n == t).count(), 1, "{t}");
        }
        assert_eq!(s.slots(), slots);
        assert_eq!(s.initial.iter().flatten().count(), slots * mode.projections());
    }
}

#[test]
fn flow_count_does_not_depend_on_length() {
    let (store, s) = flow(FloaterMode::Additive, 2, 4);
    let before = (store.count(None), s.param_count());
    for len in [1, 20, 80, 200] {
        floater_encode(&s, &store, len, 1).unwrap();
        assert_eq!((store.count(None), s.param_count()), before);
    }
}
