//! Scratch harness for tuning recipes and corpus hardness. Not part of the
//! shipped surface; run with --release.

use std::time::Instant;

use prunelab_core::model::{HeadKind, ModelConfig};
use prunelab_core::prune::{build_mask_unstructured, score_magnitude, UnstructuredScope};
use prunelab_core::rng::Rng;
use prunelab_core::task::{build_task, TaskSpec};
use prunelab_core::transfer::{
    evaluate, pretrain, prepare_downstream_params, run_dense, run_sparse, Recipe,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("subsample");
    match which {
        "subsample" => subsample_probe(),
        "contextqa" => contextqa_probe(),
        other => eprintln!("unknown probe {other}"),
    }
}

fn subsample_probe() {
    let t0 = Instant::now();
    let master = Rng::new(12345);
    let pre_cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let down_cfg = ModelConfig::reference(HeadKind::Classification { classes: 4 });

    let spec_full = TaskSpec::Subsample { base_size: 1000, data_ratio: 1.0 };
    let task_full = build_task(&spec_full, &master.fork("task")).unwrap();
    let spec_low = TaskSpec::Subsample { base_size: 1000, data_ratio: 0.10 };
    let task_low = build_task(&spec_low, &master.fork("task")).unwrap();

    let pre_recipe = Recipe { lr: 0.1, momentum: 0.9, steps: 2000, batch_size: 32 };
    let (pre, losses) = pretrain(&pre_cfg, &task_full, pre_recipe, 777).unwrap();
    println!(
        "pretrain: loss {:.3} -> {:.3}   ({:.1?})",
        losses[0],
        losses.last().unwrap(),
        t0.elapsed()
    );

    let ft = Recipe { lr: 0.05, momentum: 0.9, steps: 300, batch_size: 16 };
    let scores = score_magnitude(&pre).unwrap();
    let mask50 = build_mask_unstructured(&scores, 0.5, UnstructuredScope::Global).unwrap();

    for (name, task) in [("r=1.0", &task_full), ("r=0.1", &task_low)] {
        for seed in [0u64, 1, 2] {
            let t = Instant::now();
            let down = prepare_downstream_params(&pre, &down_cfg, seed).unwrap();
            let dense = run_dense(&down, &down_cfg, task, ft, seed).unwrap();
            let sparse = run_sparse(&down, &down_cfg, task, ft, seed, mask50.clone()).unwrap();
            println!(
                "{name} seed {seed}: dense {:.1}%  sparse50 {:.1}%  norm {:.1}  ({:.1?})",
                dense.final_metrics.accuracy,
                sparse.final_metrics.accuracy,
                100.0 * sparse.final_metrics.accuracy / dense.final_metrics.accuracy,
                t.elapsed()
            );
        }
    }

    // a scratch baseline: how does a NON-pretrained dense model do at r=1.0?
    let fresh = prepare_downstream_params(
        &prunelab_core::model::init_params(&pre_cfg, &mut Rng::new(42)).unwrap(),
        &down_cfg,
        0,
    )
    .unwrap();
    let scratch = run_dense(&fresh, &down_cfg, &task_full, ft, 0).unwrap();
    println!("scratch dense r=1.0: {:.1}%", scratch.final_metrics.accuracy);
    println!("total {:.1?}", t0.elapsed());
}

fn contextqa_probe() {
    let t0 = Instant::now();
    let master = Rng::new(999);
    let pre_cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let down_cfg = ModelConfig::reference(HeadKind::Classification { classes: 4 });

    let open = build_task(&TaskSpec::Contextqa { open_book: true }, &master.fork("task")).unwrap();
    let closed = build_task(&TaskSpec::Contextqa { open_book: false }, &master.fork("task")).unwrap();

    let pre_recipe = Recipe { lr: 0.1, momentum: 0.9, steps: 2000, batch_size: 32 };
    let (pre, losses) = pretrain(&pre_cfg, &closed, pre_recipe, 777).unwrap();
    println!(
        "pretrain: loss {:.3} -> {:.3}  ({:.1?})",
        losses[0],
        losses.last().unwrap(),
        t0.elapsed()
    );

    let ft = Recipe { lr: 0.05, momentum: 0.9, steps: 300, batch_size: 16 };
    let scores = score_magnitude(&pre).unwrap();
    let mask30 = build_mask_unstructured(&scores, 0.3, UnstructuredScope::Global).unwrap();

    for (name, task) in [("open", &open), ("closed", &closed)] {
        for seed in [0u64, 1, 2] {
            let down = prepare_downstream_params(&pre, &down_cfg, seed).unwrap();
            let dense = run_dense(&down, &down_cfg, task, ft, seed).unwrap();
            let sparse = run_sparse(&down, &down_cfg, task, ft, seed, mask30.clone()).unwrap();
            println!(
                "{name} seed {seed}: dense {:.1}%  sparse30 {:.1}%  norm {:.1}",
                dense.final_metrics.accuracy,
                sparse.final_metrics.accuracy,
                100.0 * sparse.final_metrics.accuracy / dense.final_metrics.accuracy,
            );
        }
    }
    // sanity: zero-shot closed-book accuracy of the pretrained model itself
    let down0 = prepare_downstream_params(&pre, &down_cfg, 0).unwrap();
    let m = evaluate(&down0, &down_cfg, &closed, None).unwrap();
    println!("untrained-head closed-book: {:.1}%", m.accuracy);
    println!("total {:.1?}", t0.elapsed());
}
