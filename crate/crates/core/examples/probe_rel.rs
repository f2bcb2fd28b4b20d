//! Isolated relation-learning probe: can the model learn
//! r = [group(y) == pairing(group(x))] when that is the only objective?

use prunelab_core::model::{HeadKind, ModelConfig};
use prunelab_core::rng::Rng;
use prunelab_core::task::{MlmSpec, TaskData};
use prunelab_core::transfer::{pretrain, Recipe};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let n_groups: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4);
    let tokens_per_group: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(30);

    let cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let mut rng = Rng::new(1);

    // group assignment over n_groups * tokens_per_group tokens
    let n_tokens = n_groups * tokens_per_group;
    let mut toks: Vec<u32> = (16..16 + n_tokens as u32).collect();
    rng.shuffle(&mut toks);
    let group_of = {
        let mut map = vec![0usize; n_tokens];
        for (i, &t) in toks.iter().enumerate() {
            map[(t - 16) as usize] = i / tokens_per_group;
        }
        map
    };
    let groups: Vec<Vec<u32>> = (0..n_groups)
        .map(|g| {
            toks.iter()
                .copied()
                .filter(|&t| group_of[(t - 16) as usize] == g)
                .collect()
        })
        .collect();
    let mut pairing: Vec<usize> = (0..n_groups).collect();
    rng.shuffle(&mut pairing);

    let triples: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(4);
    // corpus: [x, y, r] repeated, balanced outcomes
    let mut corpus = Vec::new();
    for _ in 0..4000 {
        let mut seq = Vec::with_capacity(3 * triples);
        for _ in 0..triples {
            let gx = rng.below(n_groups);
            let x = *rng.choose(&groups[gx]);
            let hit = rng.bernoulli(0.5);
            let gy = if hit {
                pairing[gx]
            } else {
                let mut w = rng.below(n_groups - 1);
                if w >= pairing[gx] {
                    w += 1;
                }
                w
            };
            let y = *rng.choose(&groups[gy]);
            seq.push(x);
            seq.push(y);
            seq.push(if group_of[(y - 16) as usize] == pairing[group_of[(x - 16) as usize]] {
                200
            } else {
                201
            });
        }
        corpus.push(seq);
    }

    // only rel slots are predicted, and they are always masked
    let task = TaskData {
        head: HeadKind::TokenPrediction,
        pretrain: corpus,
        mlm: MlmSpec {
            mask_prob: 0.0,
            focus_positions: (0..triples).map(|k| 3 * k + 2).collect(),
            focus_prob: 1.0,
            mask_frac: 1.0,
            random_frac: 0.0,
        },
        train: Vec::new(),
        eval_groups: Vec::new(),
    };

    let batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    let recipe = Recipe { lr, momentum: 0.9, steps, batch_size: batch };
    match pretrain(&cfg, &task, recipe, 7) {
        Ok((_, losses)) => {
            for at in [0, steps / 8, steps / 4, steps / 2, 3 * steps / 4, steps - 1] {
                println!("step {at}: loss {:.4}", losses[at]);
            }
            println!("(ln 2 = 0.693 is chance; 0 is a perfect relation circuit)");
        }
        Err(e) => println!("{e}"),
    }
}
