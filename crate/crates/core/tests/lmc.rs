//! Interpolation-curve contracts: endpoint exactness, parameter-space
//! linearity, and barrier arithmetic.

use prunelab_core::analysis::{interpolate_params, lmc_curve, loss_barrier, InterpolationPoint};
use prunelab_core::model::{init_params, HeadKind, ModelConfig};
use prunelab_core::rng::Rng;
use prunelab_core::task::gen_subsample_task;
use prunelab_core::transfer::evaluate;

fn cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 256,
        d_model: 32,
        n_blocks: 2,
        n_heads: 4,
        ff_mult: 2,
        max_seq_len: 16,
        head: HeadKind::Classification { classes: 4 },
    }
}

#[test]
fn endpoints_are_bit_equal_to_inputs() {
    let c = cfg();
    let a = init_params(&c, &mut Rng::new(1)).unwrap();
    let b = init_params(&c, &mut Rng::new(2)).unwrap();
    assert!(interpolate_params(&a, &b, 0.0).unwrap().bit_eq(&a));
    assert!(interpolate_params(&a, &b, 1.0).unwrap().bit_eq(&b));
}

#[test]
fn midpoint_arithmetic() {
    let mut a = prunelab_core::ParamSet::empty();
    a.insert(
        "w".into(),
        prunelab_core::Tensor::new(vec![1, 2], vec![0.0, 2.0]).unwrap(),
        true,
    )
    .unwrap();
    let mut b = prunelab_core::ParamSet::empty();
    b.insert(
        "w".into(),
        prunelab_core::Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap(),
        true,
    )
    .unwrap();
    let mid = interpolate_params(&a, &b, 0.5).unwrap();
    assert_eq!(mid.tensor("w").unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn parameter_space_linearity() {
    let c = cfg();
    let a = init_params(&c, &mut Rng::new(3)).unwrap();
    let b = init_params(&c, &mut Rng::new(4)).unwrap();
    let (a1, a2) = (0.3, 0.7);
    let p1 = interpolate_params(&a, &b, a1).unwrap();
    let p2 = interpolate_params(&a, &b, a2).unwrap();
    let pm = interpolate_params(&a, &b, (a1 + a2) / 2.0).unwrap();
    for (name, t1, _) in p1.iter() {
        let t2 = p2.tensor(name).unwrap();
        let tm = pm.tensor(name).unwrap();
        for ((x, y), m) in t1.data().iter().zip(t2.data()).zip(tm.data()) {
            assert!(
                (x + y - 2.0 * m).abs() <= 1e-12,
                "{name}: {x} + {y} != 2*{m}"
            );
        }
    }
}

#[test]
fn identical_models_give_a_flat_curve() {
    let c = cfg();
    let a = init_params(&c, &mut Rng::new(5)).unwrap();
    let task = gen_subsample_task(50, 1.0, &mut Rng::new(6)).unwrap();
    let curve = lmc_curve(&a, &a.clone(), &c, &task, 5).unwrap();
    let first = &curve[0];
    for p in &curve {
        assert_eq!(p.loss.to_bits(), first.loss.to_bits());
        assert_eq!(p.metric.to_bits(), first.metric.to_bits());
    }
    assert_eq!(loss_barrier(&curve), 0.0);
}

#[test]
fn curve_endpoints_evaluate_the_inputs() {
    let c = cfg();
    let a = init_params(&c, &mut Rng::new(7)).unwrap();
    let b = init_params(&c, &mut Rng::new(8)).unwrap();
    let task = gen_subsample_task(50, 1.0, &mut Rng::new(9)).unwrap();
    let curve = lmc_curve(&a, &b, &c, &task, 3).unwrap();
    let ma = evaluate(&a, &c, &task, None).unwrap();
    let mb = evaluate(&b, &c, &task, None).unwrap();
    assert_eq!(curve[0].loss.to_bits(), ma.loss.to_bits());
    assert_eq!(curve[0].metric.to_bits(), ma.accuracy.to_bits());
    assert_eq!(curve[2].loss.to_bits(), mb.loss.to_bits());
    assert_eq!(curve[2].metric.to_bits(), mb.accuracy.to_bits());
    // alphas are the uniform grid
    assert_eq!(curve[1].alpha, 0.5);
}

#[test]
fn barrier_can_be_negative_when_path_dips() {
    let curve = vec![
        InterpolationPoint { alpha: 0.0, loss: 1.0, metric: 0.0 },
        InterpolationPoint { alpha: 0.5, loss: 0.2, metric: 0.0 },
        InterpolationPoint { alpha: 1.0, loss: 1.0, metric: 0.0 },
    ];
    assert!((loss_barrier(&curve) + 0.8).abs() <= 1e-15);
}

#[test]
fn mismatched_layouts_are_rejected() {
    let c = cfg();
    let a = init_params(&c, &mut Rng::new(1)).unwrap();
    let mut c2 = c.clone();
    c2.d_model = 16;
    c2.n_heads = 2;
    let b = init_params(&c2, &mut Rng::new(1)).unwrap();
    assert!(interpolate_params(&a, &b, 0.5).is_err());
}
