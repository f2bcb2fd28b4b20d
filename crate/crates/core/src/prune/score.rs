//! Importance criteria.
//!
//! `magnitude` scores each prunable weight by |w|. `wanda` multiplies |w|
//! by the L2 norm of the calibration activations feeding that weight's
//! input feature. `second_order` builds a damped Gram matrix per layer and
//! scores `w² / [H⁻¹]_jj`, the diagonal saliency of removing the weight
//! without reconstruction.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{forward_collect, Batch, CalibStats, ModelConfig, ParamSet};
use crate::tensor::Tensor;

use super::{Criterion, ImportanceScores};

/// A fixed batch stream used to collect activation statistics.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub batches: Vec<Batch>,
}

impl CalibrationSet {
    pub fn new(batches: Vec<Batch>) -> Self {
        Self { batches }
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

/// score(w) = |w| for every prunable weight.
pub fn score_magnitude(params: &ParamSet) -> Result<ImportanceScores> {
    let entries: IndexMap<String, Tensor> = params
        .prunable()
        .map(|(n, t)| (n.to_string(), t.map(f64::abs)))
        .collect();
    ImportanceScores::new(entries, Criterion::Magnitude)
}

/// score(W[i,j]) = |W[i,j]| · ‖X[:,j]‖₂ over all calibration tokens
/// reaching the layer.
pub fn score_wanda(
    params: &ParamSet,
    cfg: &ModelConfig,
    calib: &CalibrationSet,
) -> Result<ImportanceScores> {
    let stats = collect_stats(params, cfg, calib, false)?;
    let mut entries = IndexMap::new();
    for (name, t) in params.prunable() {
        let layer = stats
            .get(name)
            .ok_or_else(|| Error::Alignment(format!("no calibration stats for {name:?}")))?;
        entries.insert(
            name.to_string(),
            wanda_from_sq_sums(t, &layer.col_sq_sum)?,
        );
    }
    ImportanceScores::new(entries, Criterion::Wanda)
}

/// Wanda score from a weight tensor and per-column sums of squared inputs.
pub fn wanda_from_sq_sums(weights: &Tensor, col_sq_sum: &[f64]) -> Result<Tensor> {
    let (rows, cols) = weights.dims2()?;
    if col_sq_sum.len() != cols {
        return Err(Error::Alignment(format!(
            "column statistics: {} entries for {} input features",
            col_sq_sum.len(),
            cols
        )));
    }
    let norms: Vec<f64> = col_sq_sum.iter().map(|&s| s.sqrt()).collect();
    let mut out = Tensor::zeros(vec![rows, cols]);
    for r in 0..rows {
        let w = weights.row(r);
        let o = out.row_mut(r);
        for j in 0..cols {
            o[j] = w[j].abs() * norms[j];
        }
    }
    Ok(out)
}

/// score(W[i,j]) = W[i,j]² / [H⁻¹]_jj with H = XᵀX + λ·mean(diag(XᵀX))·I.
pub fn score_second_order(
    params: &ParamSet,
    cfg: &ModelConfig,
    calib: &CalibrationSet,
    damping: f64,
) -> Result<ImportanceScores> {
    if damping <= 0.0 {
        return Err(Error::Validation(format!(
            "damping must be positive, got {damping}"
        )));
    }
    let stats = collect_stats(params, cfg, calib, true)?;
    let mut entries = IndexMap::new();
    for (name, t) in params.prunable() {
        let layer = stats
            .get(name)
            .ok_or_else(|| Error::Alignment(format!("no calibration stats for {name:?}")))?;
        let gram = layer
            .gram
            .as_ref()
            .expect("gram collection was requested");
        let scored = second_order_from_gram(t, gram, damping)
            .map_err(|e| Error::Numeric(format!("{name}: {e}")))?;
        entries.insert(name.to_string(), scored);
    }
    ImportanceScores::new(entries, Criterion::SecondOrder)
}

/// Second-order score from a weight tensor and the raw Gram matrix `XᵀX`.
pub fn second_order_from_gram(weights: &Tensor, gram: &Tensor, damping: f64) -> Result<Tensor> {
    let (rows, cols) = weights.dims2()?;
    let (gr, gc) = gram.dims2()?;
    if gr != cols || gc != cols {
        return Err(Error::Alignment(format!(
            "gram is {gr}x{gc} for {cols} input features"
        )));
    }
    let mut h = gram.clone();
    let mean_diag = (0..cols).map(|j| gram.data()[j * cols + j]).sum::<f64>() / cols as f64;
    let ridge = damping * mean_diag;
    for j in 0..cols {
        h.data_mut()[j * cols + j] += ridge;
    }
    let h_inv_diag = cholesky_inverse_diagonal(&h)?;
    let mut out = Tensor::zeros(vec![rows, cols]);
    for r in 0..rows {
        let w = weights.row(r);
        let o = out.row_mut(r);
        for j in 0..cols {
            o[j] = w[j] * w[j] / h_inv_diag[j];
        }
    }
    Ok(out)
}

/// Diagonal of H⁻¹ via Cholesky: H = LLᵀ, H⁻¹ = L⁻ᵀL⁻¹.
fn cholesky_inverse_diagonal(h: &Tensor) -> Result<Vec<f64>> {
    let (n, _) = h.dims2()?;
    let hd = h.data();
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = hd[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite at pivot {i}; increase damping"
                    )));
                }
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // invert the lower-triangular factor
    let mut linv = vec![0.0f64; n * n];
    for i in 0..n {
        linv[i * n + i] = 1.0 / l[i * n + i];
        for j in 0..i {
            let mut sum = 0.0;
            for k in j..i {
                sum -= l[i * n + k] * linv[k * n + j];
            }
            linv[i * n + j] = sum / l[i * n + i];
        }
    }
    // [H⁻¹]_jj = Σ_k L⁻ᵀ[j,k]·L⁻¹[k,j] = Σ_{k>=j} linv[k,j]²
    let mut diag = vec![0.0f64; n];
    for j in 0..n {
        let mut sum = 0.0;
        for k in j..n {
            sum += linv[k * n + j] * linv[k * n + j];
        }
        diag[j] = sum;
    }
    Ok(diag)
}

fn collect_stats(
    params: &ParamSet,
    cfg: &ModelConfig,
    calib: &CalibrationSet,
    want_gram: bool,
) -> Result<CalibStats> {
    if calib.is_empty() {
        return Err(Error::Validation("empty calibration set".into()));
    }
    let mut stats = CalibStats::new(want_gram);
    for batch in &calib.batches {
        forward_collect(params, cfg, batch, None, &mut stats)?;
    }
    Ok(stats)
}
