//! Property tests for checkpoint and mask file round trips.

use proptest::prelude::*;

use prunelab_core::checkpoint::{load_checkpoint, save_checkpoint};
use prunelab_core::model::{init_params, HeadKind, ModelConfig};
use prunelab_core::prune::{
    build_mask_nm, build_mask_unstructured, load_mask, save_mask, score_magnitude,
    UnstructuredScope,
};
use prunelab_core::rng::Rng;
use prunelab_core::{ParamSet, Tensor};

fn arb_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e12f64..1e12,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1.5e-310), // subnormal
        Just(-7.25),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        rows in 1usize..6,
        cols in 1usize..10,
        seed in 0u64..1000,
        extremes in proptest::collection::vec(arb_value(), 4),
    ) {
        let mut rng = Rng::new(seed);
        let mut p = ParamSet::empty();
        let mut data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        for (i, v) in extremes.iter().enumerate() {
            let idx = i % data.len();
            data[idx] = *v;
        }
        p.insert("a.weight".into(), Tensor::new(vec![rows, cols], data).unwrap(), true).unwrap();
        p.insert("b.bias".into(), Tensor::new(vec![cols], vec![0.5; cols]).unwrap(), false).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        prop_assert!(p.bit_eq(&q));
    }

    #[test]
    fn mask_round_trip_preserves_bits(seed in 0u64..500, s in 0.0f64..0.99) {
        let cfg = ModelConfig {
            vocab_size: 32,
            d_model: 16,
            n_blocks: 1,
            n_heads: 2,
            ff_mult: 2,
            max_seq_len: 8,
            head: HeadKind::TokenPrediction,
        };
        let params = init_params(&cfg, &mut Rng::new(seed)).unwrap();
        let scores = score_magnitude(&params).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let unstructured = build_mask_unstructured(&scores, s, UnstructuredScope::Global).unwrap();
        let path = dir.path().join("u.mask");
        save_mask(&unstructured, &path).unwrap();
        prop_assert_eq!(load_mask(&path).unwrap(), unstructured);

        let nm = build_mask_nm(&scores, 3, 8).unwrap();
        let path = dir.path().join("nm.mask");
        save_mask(&nm, &path).unwrap();
        prop_assert_eq!(load_mask(&path).unwrap(), nm);
    }
}

#[test]
fn reference_checkpoint_reloads_and_reproduces_forward_outputs() {
    use prunelab_core::model::{forward, Batch, Labels};

    let cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let params = init_params(&cfg, &mut Rng::new(33)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert!(params.bit_eq(&reloaded));

    let mut rng = Rng::new(34);
    let (b, s) = (4, 10);
    let tokens: Vec<u32> = (0..b * s).map(|_| rng.below(cfg.vocab_size) as u32).collect();
    let mut labels = vec![-1i64; b * s];
    for l in labels.iter_mut().step_by(3) {
        *l = rng.below(cfg.vocab_size) as i64;
    }
    let batch = Batch {
        tokens,
        batch: b,
        seq: s,
        lengths: vec![s; b],
        labels: Labels::PerToken(labels),
    };
    let (l1, o1) = forward(&params, &cfg, &batch, None).unwrap();
    let (l2, o2) = forward(&reloaded, &cfg, &batch, None).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert!(o1.bit_eq(&o2));
}
