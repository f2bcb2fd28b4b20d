//! Measures the pre-trained relation circuit directly: MLM-head accuracy on
//! the rel slot of downstream-format items, dense vs pruned. Scratch tool.

use prunelab_core::model::{forward, HeadKind, ModelConfig};
use prunelab_core::prune::{apply_mask, build_mask_unstructured, score_magnitude, UnstructuredScope};
use prunelab_core::rng::Rng;
use prunelab_core::task::{build_task, make_batch, ItemLabel, TaskSpec};
use prunelab_core::transfer::{pretrain, Recipe};

fn rel_slot_accuracy(
    params: &prunelab_core::ParamSet,
    cfg: &ModelConfig,
    items: &[prunelab_core::task::Item],
) -> f64 {
    // score REL token logits at position 2
    let (mut hit, mut n) = (0usize, 0usize);
    for chunk in items.chunks(64) {
        let refs: Vec<_> = chunk.iter().collect();
        let mut batch = make_batch(&refs).unwrap();
        // token-head forward needs PerToken labels; mark position 2 scored
        let mut labels = vec![-1i64; batch.batch * batch.seq];
        for s in 0..batch.batch {
            labels[s * batch.seq + 2] = 200;
        }
        batch.labels = prunelab_core::model::Labels::PerToken(labels);
        let (_, logits) = forward(params, cfg, &batch, None).unwrap();
        let vocab = *logits.shape().last().unwrap();
        for (i, item) in chunk.iter().enumerate() {
            let base = (i * batch.seq + 2) * vocab;
            let l0 = logits.data()[base + 200];
            let l1 = logits.data()[base + 201];
            let pred = usize::from(l1 > l0);
            let ItemLabel::Class(c) = item.label else { panic!() };
            hit += usize::from(pred == c >> 1);
            n += 1;
        }
    }
    100.0 * hit as f64 / n as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let pre_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let master = Rng::new(12345);
    let pre_cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let task = build_task(
        &TaskSpec::Subsample { base_size: 1000, data_ratio: 1.0 },
        &master.fork("task"),
    )
    .unwrap();

    let (pre, losses) = pretrain(
        &pre_cfg,
        &task,
        Recipe { lr: pre_lr, momentum: 0.9, steps: pre_steps, batch_size: 32 },
        777,
    )
    .unwrap();
    println!("mlm {:.3} -> {:.3}", losses[0], losses.last().unwrap());

    let items = &task.eval_groups[0].items;
    println!("dense rel-slot acc: {:.1}%", rel_slot_accuracy(&pre, &pre_cfg, items));

    let scores = score_magnitude(&pre).unwrap();
    for s in [0.3, 0.5, 0.7] {
        let mask = build_mask_unstructured(&scores, s, UnstructuredScope::Global).unwrap();
        let pruned = apply_mask(&pre, &mask).unwrap();
        println!(
            "pruned {s:.0}% rel-slot acc: {:.1}%",
            rel_slot_accuracy(&pruned, &pre_cfg, items)
        );
    }
}
