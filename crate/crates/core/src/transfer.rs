//! Fine-tuning regimes as deterministic training loops.
//!
//! Four regimes differ only in what happens to low-importance coordinates:
//!
//! - dense: every parameter trains;
//! - dense with partial freezing: the bottom-q fraction of prunable weights
//!   by starting magnitude (global ranking, pruner tie-break) receive no
//!   updates and finish bit-equal to their starting values;
//! - sparse: weights are pruned first and the zero pattern is enforced
//!   after every step (project-after-step, momentum kept at zero);
//! - sparse-to-dense: weights start pruned but train unconstrained, so
//!   pruned coordinates may regrow.
//!
//! The optimizer is plain SGD with momentum; every regime uses the same
//! recipe so regime differences are attributable to the constraint alone.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, init_params, loss_and_grads, GradSet, ModelConfig, ParamSet};
use crate::prune::{apply_mask, build_mask_unstructured, score_magnitude, PruneMask, UnstructuredScope};
use crate::rng::Rng;
use crate::task::{make_batch, sample_mlm_batch, sample_train_batch, EvalGroup, TaskData};

/// Eval batches are chunked at this size.
const EVAL_CHUNK: usize = 64;

/// Optimizer recipe shared by all regimes of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
}

/// Which regime to run, with its parameters.
#[derive(Debug, Clone)]
pub enum RegimeKind {
    Dense,
    DenseFreeze { q: f64 },
    Sparse { mask: PruneMask },
    SparseToDense { mask: PruneMask },
}

impl RegimeKind {
    pub fn name(&self) -> &'static str {
        match self {
            RegimeKind::Dense => "dense",
            RegimeKind::DenseFreeze { .. } => "dense_freeze",
            RegimeKind::Sparse { .. } => "sparse",
            RegimeKind::SparseToDense { .. } => "sparse_to_dense",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub recipe: Recipe,
    pub seed: u64,
}

/// Evaluation result over a task's eval splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Accuracy in percent on the primary split.
    pub accuracy: f64,
    /// Mean loss on the primary split.
    pub loss: f64,
    /// (split name, accuracy) for every split.
    pub per_domain: Vec<(String, f64)>,
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Per-step training loss; length equals the configured steps.
    pub losses: Vec<f64>,
    pub final_params: ParamSet,
    pub final_metrics: EvalMetrics,
    pub wall_time: Duration,
}

impl TrainTrace {
    /// JSON-lines serialization: one `{"step":i,"loss":x}` object per step,
    /// then a final object with the metrics and wall time.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (step, loss) in self.losses.iter().enumerate() {
            let line = serde_json::json!({ "step": step, "loss": loss });
            writeln!(w, "{line}")?;
        }
        let fin = serde_json::json!({
            "final": self.final_metrics,
            "wall_ms": self.wall_time.as_millis() as u64,
        });
        writeln!(w, "{fin}")?;
        w.flush()?;
        Ok(())
    }
}

/// Initialize downstream parameters for a task head and copy every
/// shape-compatible tensor from the pre-trained checkpoint.
pub fn prepare_downstream_params(pre: &ParamSet, cfg: &ModelConfig, seed: u64) -> Result<ParamSet> {
    let mut params = init_params(cfg, &mut Rng::new(seed).fork("head_init"))?;
    let copied = params.adopt_backbone(pre);
    if copied.is_empty() {
        return Err(Error::Alignment(
            "checkpoint shares no parameters with the downstream model".into(),
        ));
    }
    Ok(params)
}

pub fn run_dense(
    pre: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    recipe: Recipe,
    seed: u64,
) -> Result<TrainTrace> {
    run_regime(
        pre,
        cfg,
        task,
        &RegimeSpec {
            kind: RegimeKind::Dense,
            recipe,
            seed,
        },
    )
}

pub fn run_dense_freeze(
    pre: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    recipe: Recipe,
    seed: u64,
    q: f64,
) -> Result<TrainTrace> {
    run_regime(
        pre,
        cfg,
        task,
        &RegimeSpec {
            kind: RegimeKind::DenseFreeze { q },
            recipe,
            seed,
        },
    )
}

pub fn run_sparse(
    pre: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    recipe: Recipe,
    seed: u64,
    mask: PruneMask,
) -> Result<TrainTrace> {
    run_regime(
        pre,
        cfg,
        task,
        &RegimeSpec {
            kind: RegimeKind::Sparse { mask },
            recipe,
            seed,
        },
    )
}

pub fn run_sparse_to_dense(
    pre: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    recipe: Recipe,
    seed: u64,
    mask: PruneMask,
) -> Result<TrainTrace> {
    run_regime(
        pre,
        cfg,
        task,
        &RegimeSpec {
            kind: RegimeKind::SparseToDense { mask },
            recipe,
            seed,
        },
    )
}

enum Constraint<'a> {
    Free,
    /// Dropped coordinates never move.
    Frozen(&'a PruneMask),
    /// Dropped coordinates are re-zeroed after every step.
    Pinned(&'a PruneMask),
}

/// Run one regime. `pre` must already match the downstream config (see
/// [`prepare_downstream_params`]); its values are the step-0 state.
pub fn run_regime(
    pre: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    spec: &RegimeSpec,
) -> Result<TrainTrace> {
    let start = Instant::now();

    let freeze_mask;
    let (mut params, constraint, eval_mask) = match &spec.kind {
        RegimeKind::Dense => (pre.clone(), Constraint::Free, None),
        RegimeKind::DenseFreeze { q } => {
            if !(0.0..1.0).contains(q) {
                return Err(Error::Validation(format!("freeze fraction {q} outside [0, 1)")));
            }
            // ranked once on the starting magnitudes, never re-ranked
            let scores = score_magnitude(pre)?;
            freeze_mask = build_mask_unstructured(&scores, *q, UnstructuredScope::Global)?;
            (pre.clone(), Constraint::Frozen(&freeze_mask), None)
        }
        RegimeKind::Sparse { mask } => {
            let params = apply_mask(pre, mask)?;
            (params, Constraint::Pinned(mask), Some(mask))
        }
        RegimeKind::SparseToDense { mask } => {
            let params = apply_mask(pre, mask)?;
            (params, Constraint::Free, None)
        }
    };

    if task.train.is_empty() && spec.recipe.steps > 0 {
        return Err(Error::Validation(
            "task has an empty fine-tune split but the recipe wants steps; use steps = 0".into(),
        ));
    }

    let mut velocity = GradSet::zeros_like(&params);
    let mut rng = Rng::new(spec.seed).fork("train");
    let mut losses = Vec::with_capacity(spec.recipe.steps);

    for step in 0..spec.recipe.steps {
        let batch = sample_train_batch(&task.train, spec.recipe.batch_size, &mut rng)?;
        let (loss, grads) = match loss_and_grads(&params, cfg, &batch, None) {
            Ok(ok) => ok,
            Err(Error::Numeric(m)) => {
                return Err(Error::Diverged { step, message: m });
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("loss = {loss}"),
            });
        }
        sgd_step(&mut params, &grads, &mut velocity, &spec.recipe, &constraint);
        losses.push(loss);
    }

    let final_metrics = evaluate(&params, cfg, task, eval_mask)?;
    Ok(TrainTrace {
        losses,
        final_params: params,
        final_metrics,
        wall_time: start.elapsed(),
    })
}

fn sgd_step(
    params: &mut ParamSet,
    grads: &GradSet,
    velocity: &mut GradSet,
    recipe: &Recipe,
    constraint: &Constraint,
) {
    let names: Vec<String> = grads.iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let g = grads.get(name).unwrap();
        let mask_entry = match constraint {
            Constraint::Free => None,
            Constraint::Frozen(m) | Constraint::Pinned(m) => m.entry(name),
        };
        let v = velocity.tensor_mut(name);
        let w = params.tensor_mut(name).unwrap();
        let (wd, vd, gd) = (w.data_mut(), v.data_mut(), g.data());
        match (constraint, mask_entry) {
            (Constraint::Frozen(_), Some(mt)) => {
                let keep = mt.keep();
                for i in 0..wd.len() {
                    if keep[i] == 0 {
                        vd[i] = 0.0;
                    } else {
                        vd[i] = recipe.momentum * vd[i] + gd[i];
                        wd[i] -= recipe.lr * vd[i];
                    }
                }
            }
            (Constraint::Pinned(_), Some(mt)) => {
                let keep = mt.keep();
                for i in 0..wd.len() {
                    vd[i] = recipe.momentum * vd[i] + gd[i];
                    wd[i] -= recipe.lr * vd[i];
                    if keep[i] == 0 {
                        wd[i] = 0.0;
                        vd[i] = 0.0;
                    }
                }
            }
            _ => {
                for i in 0..wd.len() {
                    vd[i] = recipe.momentum * vd[i] + gd[i];
                    wd[i] -= recipe.lr * vd[i];
                }
            }
        }
    }
}

/// Accuracy (percent) and mean loss over a task's eval splits; the primary
/// split drives `accuracy`/`loss`, every split lands in `per_domain`.
/// Pure: repeated calls give bit-equal results.
pub fn evaluate(
    params: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    mask: Option<&PruneMask>,
) -> Result<EvalMetrics> {
    let mut per_domain = Vec::with_capacity(task.eval_groups.len());
    let mut primary: Option<(f64, f64)> = None;
    for group in &task.eval_groups {
        let (acc, loss) = eval_group(params, cfg, group, mask)?;
        if primary.is_none() {
            primary = Some((acc, loss));
        }
        per_domain.push((group.name.clone(), acc));
    }
    let (accuracy, loss) =
        primary.ok_or_else(|| Error::Validation("task has no eval groups".into()))?;
    Ok(EvalMetrics {
        accuracy,
        loss,
        per_domain,
    })
}

fn eval_group(
    params: &ParamSet,
    cfg: &ModelConfig,
    group: &EvalGroup,
    mask: Option<&PruneMask>,
) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut nll_sum = 0.0;
    for chunk in group.items.chunks(EVAL_CHUNK) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = make_batch(&refs)?;
        let (loss, logits) = forward(params, cfg, &batch, mask)?;
        match &batch.labels {
            crate::model::Labels::PerSequence(labels) => {
                let k = logits.shape()[1];
                for (s, &label) in labels.iter().enumerate() {
                    let row = &logits.data()[s * k..(s + 1) * k];
                    if argmax(row) == label {
                        correct += 1;
                    }
                }
                nll_sum += loss * labels.len() as f64;
                total += labels.len();
            }
            crate::model::Labels::PerToken(labels) => {
                let vocab = *logits.shape().last().unwrap();
                let mut scored = 0usize;
                for s in 0..batch.batch {
                    for p in 0..batch.lengths[s] {
                        let l = labels[s * batch.seq + p];
                        if l >= 0 {
                            let base = (s * batch.seq + p) * vocab;
                            let row = &logits.data()[base..base + vocab];
                            if argmax(row) == l as usize {
                                correct += 1;
                            }
                            scored += 1;
                        }
                    }
                }
                nll_sum += loss * scored as f64;
                total += scored;
            }
        }
    }
    if total == 0 {
        return Err(Error::Validation("eval group has nothing to score".into()));
    }
    Ok((
        100.0 * correct as f64 / total as f64,
        nll_sum / total as f64,
    ))
}

/// First index of the maximum (ties resolve to the lowest index).
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Train the masked-token objective on a task's pre-training corpus.
/// This is the "pre-trained model" every regime starts from.
pub fn pretrain(
    cfg: &ModelConfig,
    task: &TaskData,
    recipe: Recipe,
    seed: u64,
) -> Result<(ParamSet, Vec<f64>)> {
    if cfg.head != crate::model::HeadKind::TokenPrediction {
        return Err(Error::Config(
            "pre-training uses the token-prediction head".into(),
        ));
    }
    let rng = Rng::new(seed);
    let mut params = init_params(cfg, &mut rng.fork("init"))?;
    let mut velocity = GradSet::zeros_like(&params);
    let mut batch_rng = rng.fork("batches");
    let mut losses = Vec::with_capacity(recipe.steps);
    for step in 0..recipe.steps {
        let batch = sample_mlm_batch(&task.pretrain, &task.mlm, recipe.batch_size, &mut batch_rng)?;
        let (loss, grads) = match loss_and_grads(&params, cfg, &batch, None) {
            Ok(ok) => ok,
            Err(Error::Numeric(m)) => return Err(Error::Diverged { step, message: m }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                message: format!("loss = {loss}"),
            });
        }
        sgd_step(&mut params, &grads, &mut velocity, &recipe, &Constraint::Free);
        losses.push(loss);
    }
    Ok((params, losses))
}
