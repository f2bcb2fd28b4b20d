//! Bit-level error analysis for the subsample family. Scratch tool.

use prunelab_core::model::{forward, HeadKind, ModelConfig};
use prunelab_core::prune::{build_mask_unstructured, score_magnitude, UnstructuredScope};
use prunelab_core::rng::Rng;
use prunelab_core::task::{build_task, make_batch, ItemLabel, TaskSpec};
use prunelab_core::transfer::{pretrain, prepare_downstream_params, run_dense, run_sparse, Recipe};

fn bit_accs(
    params: &prunelab_core::ParamSet,
    cfg: &ModelConfig,
    items: &[prunelab_core::task::Item],
) -> (f64, f64, f64) {
    let (mut full, mut hit1, mut hit0, mut n) = (0usize, 0usize, 0usize, 0usize);
    for chunk in items.chunks(64) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = make_batch(&refs).unwrap();
        let (_, logits) = forward(params, cfg, &batch, None).unwrap();
        let k = logits.shape()[1];
        for (i, item) in chunk.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            let ItemLabel::Class(c) = item.label else { panic!() };
            full += usize::from(best == c);
            hit1 += usize::from(best >> 1 == c >> 1);
            hit0 += usize::from(best & 1 == c & 1);
            n += 1;
        }
    }
    (
        100.0 * full as f64 / n as f64,
        100.0 * hit1 as f64 / n as f64,
        100.0 * hit0 as f64 / n as f64,
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let ft_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let ft_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(300);

    let master = Rng::new(12345);
    let pre_cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let down_cfg = ModelConfig::reference(HeadKind::Classification { classes: 4 });
    let full = build_task(
        &TaskSpec::Subsample { base_size: 1000, data_ratio: 1.0 },
        &master.fork("task"),
    )
    .unwrap();
    let low = build_task(
        &TaskSpec::Subsample { base_size: 1000, data_ratio: 0.10 },
        &master.fork("task"),
    )
    .unwrap();

    let (pre, losses) = pretrain(
        &pre_cfg,
        &full,
        Recipe { lr: 0.1, momentum: 0.9, steps: pre_steps, batch_size: 32 },
        777,
    )
    .unwrap();
    println!("mlm {:.3} -> {:.3}", losses[0], losses.last().unwrap());

    let ft = Recipe { lr: ft_lr, momentum: 0.9, steps: ft_steps, batch_size: 16 };
    let scores = score_magnitude(&pre).unwrap();
    let mask = build_mask_unstructured(&scores, 0.5, UnstructuredScope::Global).unwrap();

    for (name, task) in [("r=1.0", &full), ("r=0.1", &low)] {
        for seed in [0u64, 1] {
            let down = prepare_downstream_params(&pre, &down_cfg, seed).unwrap();
            let d = run_dense(&down, &down_cfg, task, ft, seed).unwrap();
            let (da, d1, d0) = bit_accs(&d.final_params, &down_cfg, &task.eval_groups[0].items);
            let s = run_sparse(&down, &down_cfg, task, ft, seed, mask.clone()).unwrap();
            let (sa, s1, s0) = bit_accs(&s.final_params, &down_cfg, &task.eval_groups[0].items);
            println!(
                "{name} seed {seed}: dense {da:.1} (rel {d1:.1} / b {d0:.1})   sparse50 {sa:.1} (rel {s1:.1} / b {s0:.1})"
            );
        }
    }
}
