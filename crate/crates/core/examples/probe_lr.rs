//! LR/steps exploration for the reference recipes. Scratch tool.

use prunelab_core::model::{HeadKind, ModelConfig};
use prunelab_core::rng::Rng;
use prunelab_core::task::{build_task, TaskSpec};
use prunelab_core::transfer::{pretrain, prepare_downstream_params, run_dense, Recipe};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("mlm");

    let master = Rng::new(12345);
    let pre_cfg = ModelConfig::reference(HeadKind::TokenPrediction);
    let down_cfg = ModelConfig::reference(HeadKind::Classification { classes: 4 });
    let task = build_task(
        &TaskSpec::Subsample { base_size: 1000, data_ratio: 1.0 },
        &master.fork("task"),
    )
    .unwrap();

    match mode {
        "mlm" => {
            for lr in [0.1, 0.3, 0.5, 1.0, 2.0] {
                let recipe = Recipe { lr, momentum: 0.9, steps: 800, batch_size: 32 };
                match pretrain(&pre_cfg, &task, recipe, 777) {
                    Ok((_, losses)) => {
                        let tail: f64 = losses[losses.len() - 50..].iter().sum::<f64>() / 50.0;
                        println!(
                            "mlm lr={lr}: start {:.3} step200 {:.3} step400 {:.3} tail {:.3}",
                            losses[0], losses[200], losses[400], tail
                        );
                    }
                    Err(e) => println!("mlm lr={lr}: {e}"),
                }
            }
        }
        "ft" => {
            // fine-tune from a pretrained model at the best mlm recipe so far
            let lr_pre: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.5);
            let steps_pre: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(800);
            let (pre, losses) = pretrain(
                &pre_cfg,
                &task,
                Recipe { lr: lr_pre, momentum: 0.9, steps: steps_pre, batch_size: 32 },
                777,
            )
            .unwrap();
            println!("pretrained: mlm {:.3} -> {:.3}", losses[0], losses.last().unwrap());

            for lr in [0.05, 0.1, 0.3, 0.5, 1.0] {
                for steps in [300usize, 800] {
                    let recipe = Recipe { lr, momentum: 0.9, steps, batch_size: 16 };
                    let down = prepare_downstream_params(&pre, &down_cfg, 0).unwrap();
                    match run_dense(&down, &down_cfg, &task, recipe, 0) {
                        Ok(t) => {
                            let tail: f64 =
                                t.losses[t.losses.len() - 20..].iter().sum::<f64>() / 20.0;
                            println!(
                                "ft lr={lr} steps={steps}: train tail {:.3}  eval {:.1}%",
                                tail, t.final_metrics.accuracy
                            );
                        }
                        Err(e) => println!("ft lr={lr} steps={steps}: {e}"),
                    }
                }
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
