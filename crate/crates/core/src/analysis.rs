//! Measurement machinery: across-task difficulty, dense-normalized records,
//! linear interpolation between fine-tuned models, and layer-collapse
//! reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamSet};
use crate::prune::PruneMask;
use crate::task::{ScoreTable, TaskData};

use crate::transfer::evaluate;

// ---------------------------------------------------------------------------
// across-task difficulty
// ---------------------------------------------------------------------------

/// Signed task difficulty in percent, rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub task: String,
    pub value: f64,
}

/// `100·(human − model)/human`, rounded to two decimals (half away from
/// zero). Positive values mean the model trails the human reference.
pub fn task_difficulty(human: f64, model: f64) -> Result<f64> {
    if human <= 0.0 {
        return Err(Error::Validation(format!(
            "human score must be positive, got {human}"
        )));
    }
    let raw = 100.0 * (human - model) / human;
    Ok((raw * 100.0).round() / 100.0)
}

/// Difficulty per row of a score table, in table order.
pub fn difficulty_table(table: &ScoreTable) -> Result<Vec<DifficultyScore>> {
    table
        .rows
        .iter()
        .map(|r| {
            Ok(DifficultyScore {
                task: r.task.clone(),
                value: task_difficulty(r.human, r.model)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// linear mode connectivity
// ---------------------------------------------------------------------------

/// One point along a parameter-space interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationPoint {
    pub alpha: f64,
    pub loss: f64,
    pub metric: f64,
}

/// `θ̃ = α·θ_s + (1−α)·θ_d` over every parameter. The endpoints return the
/// inputs themselves, bit-exactly.
pub fn interpolate_params(theta_d: &ParamSet, theta_s: &ParamSet, alpha: f64) -> Result<ParamSet> {
    theta_d.check_same_layout(theta_s)?;
    if alpha == 0.0 {
        return Ok(theta_d.clone());
    }
    if alpha == 1.0 {
        return Ok(theta_s.clone());
    }
    let mut out = theta_d.clone();
    for (name, t_s, _) in theta_s.iter() {
        let t = out.tensor_mut(name)?;
        for (v, &s) in t.data_mut().iter_mut().zip(t_s.data()) {
            *v = alpha * s + (1.0 - alpha) * *v;
        }
    }
    Ok(out)
}

/// Evaluate loss and metric along the line between two fine-tuned models,
/// on a uniform grid of `n_points` alphas over [0, 1].
pub fn lmc_curve(
    theta_d: &ParamSet,
    theta_s: &ParamSet,
    cfg: &ModelConfig,
    task: &TaskData,
    n_points: usize,
) -> Result<Vec<InterpolationPoint>> {
    if n_points < 2 {
        return Err(Error::Validation(format!(
            "interpolation needs at least 2 points, got {n_points}"
        )));
    }
    theta_d.check_same_layout(theta_s)?;
    let mut curve = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let alpha = i as f64 / (n_points - 1) as f64;
        let params = interpolate_params(theta_d, theta_s, alpha)?;
        let metrics = evaluate(&params, cfg, task, None)?;
        curve.push(InterpolationPoint {
            alpha,
            loss: metrics.loss,
            metric: metrics.accuracy,
        });
    }
    Ok(curve)
}

/// Maximum excess of the curve's loss above the straight chord between its
/// endpoint losses, over interior points. Zero for a flat curve; negative
/// when the whole path dips below the chord.
pub fn loss_barrier(curve: &[InterpolationPoint]) -> f64 {
    if curve.len() < 3 {
        return 0.0;
    }
    let l0 = curve.first().unwrap().loss;
    let l1 = curve.last().unwrap().loss;
    let mut barrier = f64::NEG_INFINITY;
    for p in &curve[1..curve.len() - 1] {
        let chord = (1.0 - p.alpha) * l0 + p.alpha * l1;
        barrier = barrier.max(p.loss - chord);
    }
    barrier
}

// ---------------------------------------------------------------------------
// layer collapse
// ---------------------------------------------------------------------------

/// Kept fraction per tensor plus the tensors a mask zeroes entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// (tensor name, kept fraction) in mask order.
    pub per_tensor: Vec<(String, f64)>,
    /// Names whose mask keeps zero weights.
    pub collapsed: Vec<String>,
}

pub fn detect_layer_collapse(mask: &PruneMask) -> CollapseReport {
    let mut per_tensor = Vec::with_capacity(mask.len());
    let mut collapsed = Vec::new();
    for (name, mt) in mask.iter() {
        let kept = mt.kept();
        per_tensor.push((name.to_string(), kept as f64 / mt.len() as f64));
        if kept == 0 {
            collapsed.push(name.to_string());
        }
    }
    CollapseReport {
        per_tensor,
        collapsed,
    }
}

// ---------------------------------------------------------------------------
// dense-normalized records
// ---------------------------------------------------------------------------

/// Whether a record could be normalized against its dense baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStatus {
    Ok,
    MissingBaseline,
    ZeroBaseline,
}

impl std::fmt::Display for NormStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NormStatus::Ok => "ok",
            NormStatus::MissingBaseline => "missing_baseline",
            NormStatus::ZeroBaseline => "zero_baseline",
        };
        f.write_str(s)
    }
}

/// One experiment outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Task identity (family plus knob), e.g. `subsample@r=0.10`.
    pub task: String,
    pub criterion: String,
    pub pattern: String,
    pub sparsity: f64,
    pub regime: String,
    pub seed: u64,
    /// Raw metric in percent.
    pub raw: f64,
    pub final_loss: f64,
    /// `100·raw/dense_raw` for the matching (task, seed) dense run.
    pub normalized: Option<f64>,
    pub norm_status: NormStatus,
}

/// Dense baselines keyed by (task, seed).
pub fn dense_baselines(records: &[RunRecord]) -> HashMap<(String, u64), f64> {
    records
        .iter()
        .filter(|r| r.regime == "dense")
        .map(|r| ((r.task.clone(), r.seed), r.raw))
        .collect()
}

/// Fill in `normalized` for every record. Records without a matching dense
/// baseline, or whose baseline is zero, are flagged rather than dropped.
pub fn normalize_records(
    records: &mut [RunRecord],
    baselines: &HashMap<(String, u64), f64>,
) {
    for r in records.iter_mut() {
        match baselines.get(&(r.task.clone(), r.seed)) {
            None => {
                r.normalized = None;
                r.norm_status = NormStatus::MissingBaseline;
            }
            Some(&dense) if dense == 0.0 => {
                r.normalized = None;
                r.norm_status = NormStatus::ZeroBaseline;
            }
            Some(&dense) => {
                r.normalized = Some(100.0 * r.raw / dense);
                r.norm_status = NormStatus::Ok;
            }
        }
    }
}
