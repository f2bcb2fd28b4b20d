//! Minimal trainability probe: mask the last position, whose token always
//! copies position 0. A working attention stack should crack this quickly.

use prunelab_core::model::{HeadKind, ModelConfig};
use prunelab_core::rng::Rng;
use prunelab_core::task::{sample_mlm_batch, MlmSpec};
use prunelab_core::transfer::{pretrain, Recipe};
use prunelab_core::task::TaskData;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(800);

    let cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let mut rng = Rng::new(1);
    let seq = 8usize;
    let corpus: Vec<Vec<u32>> = (0..2000)
        .map(|_| {
            let mut s: Vec<u32> = (0..seq).map(|_| 16 + rng.below(200) as u32).collect();
            s[seq - 1] = s[0];
            s
        })
        .collect();

    // mask only the final position
    let mlm = MlmSpec {
        mask_prob: 0.0,
        focus_positions: vec![seq - 1],
        focus_prob: 1.0,
    };
    let task = TaskData {
        head: HeadKind::TokenPrediction,
        pretrain: corpus,
        mlm,
        train: Vec::new(),
        eval_groups: Vec::new(),
    };

    let recipe = Recipe { lr, momentum: 0.9, steps, batch_size: 32 };
    match pretrain(&cfg, &task, recipe, 7) {
        Ok((_, losses)) => {
            for at in [0, steps / 4, steps / 2, 3 * steps / 4, steps - 1] {
                println!("step {at}: loss {:.3}", losses[at]);
            }
            // ideal: ~0; marginal-only: ~ln 200 = 5.3
        }
        Err(e) => println!("{e}"),
    }
    // keep sample_mlm_batch linked for quick experiments
    let _ = sample_mlm_batch;
}
