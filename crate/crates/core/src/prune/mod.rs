//! Importance scoring and mask construction.
//!
//! Three importance criteria (weight magnitude, activation-weighted
//! magnitude, and a diagonal second-order saliency) feed three mask shapes:
//! unstructured with a single global budget, unstructured with per-tensor
//! budgets, and structured N:M groups along each row's input dimension.

mod io;
mod mask;
mod score;

pub use io::{load_mask, save_mask};
pub use mask::{apply_mask, build_mask_nm, build_mask_unstructured, UnstructuredScope};
pub use score::{
    score_magnitude, score_second_order, score_wanda, second_order_from_gram, wanda_from_sq_sums,
    CalibrationSet,
};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::Tensor;

/// Which importance criterion produced a score set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Magnitude,
    Wanda,
    SecondOrder,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criterion::Magnitude => "magnitude",
            Criterion::Wanda => "wanda",
            Criterion::SecondOrder => "second_order",
        };
        f.write_str(s)
    }
}

/// Nonnegative per-weight scores over every prunable parameter.
#[derive(Debug, Clone)]
pub struct ImportanceScores {
    entries: IndexMap<String, Tensor>,
    criterion: Criterion,
}

impl ImportanceScores {
    pub fn new(entries: IndexMap<String, Tensor>, criterion: Criterion) -> Result<Self> {
        for (name, t) in &entries {
            if t.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "importance scores for {name:?} contain negative or non-finite values"
                )));
            }
        }
        Ok(Self { entries, criterion })
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weights(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }
}

/// Sparsity pattern of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskPattern {
    UnstructuredGlobal,
    UnstructuredLayerwise,
    Nm { n: usize, m: usize },
}

impl std::fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskPattern::UnstructuredGlobal => write!(f, "unstructured_global"),
            MaskPattern::UnstructuredLayerwise => write!(f, "unstructured_layerwise"),
            MaskPattern::Nm { n, m } => write!(f, "{n}:{m}"),
        }
    }
}

/// Binary keep/drop pattern for one tensor. `keep` is row-major, one byte
/// per weight, 1 = keep.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTensor {
    shape: Vec<usize>,
    keep: Vec<u8>,
}

impl MaskTensor {
    pub fn new(shape: Vec<usize>, keep: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != keep.len() {
            return Err(Error::Dim(format!(
                "mask shape {:?} wants {} entries, got {}",
                shape,
                n,
                keep.len()
            )));
        }
        if keep.iter().any(|&k| k > 1) {
            return Err(Error::Validation("mask entries must be 0 or 1".into()));
        }
        Ok(Self { shape, keep })
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            keep: vec![1; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[u8] {
        &self.keep
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().map(|&k| k as usize).sum()
    }

    pub fn zeros(&self) -> usize {
        self.len() - self.kept()
    }
}

/// Binary keep/drop pattern aligned to the prunable tensors of a parameter
/// set, plus the pattern and target sparsity it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    entries: IndexMap<String, MaskTensor>,
    pattern: MaskPattern,
    target_sparsity: f64,
}

impl PruneMask {
    pub fn new(
        entries: IndexMap<String, MaskTensor>,
        pattern: MaskPattern,
        target_sparsity: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&target_sparsity) {
            return Err(Error::Validation(format!(
                "target sparsity {target_sparsity} outside [0, 1)"
            )));
        }
        Ok(Self {
            entries,
            pattern,
            target_sparsity,
        })
    }

    /// Keep-everything mask over the prunable tensors of `params`.
    pub fn all_ones(params: &ParamSet) -> Self {
        let entries = params
            .prunable()
            .map(|(n, t)| (n.to_string(), MaskTensor::ones(t.shape().to_vec())))
            .collect();
        Self {
            entries,
            pattern: MaskPattern::UnstructuredGlobal,
            target_sparsity: 0.0,
        }
    }

    pub fn pattern(&self) -> MaskPattern {
        self.pattern
    }

    pub fn target_sparsity(&self) -> f64 {
        self.target_sparsity
    }

    pub fn entry(&self, name: &str) -> Option<&MaskTensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MaskTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weights(&self) -> usize {
        self.entries.values().map(MaskTensor::len).sum()
    }

    pub fn total_zeros(&self) -> usize {
        self.entries.values().map(MaskTensor::zeros).sum()
    }

    /// Achieved sparsity: zeros / total.
    pub fn sparsity(&self) -> f64 {
        if self.total_weights() == 0 {
            0.0
        } else {
            self.total_zeros() as f64 / self.total_weights() as f64
        }
    }

    /// The mask must cover exactly the prunable tensors of `params`, with
    /// matching shapes.
    pub fn check_alignment(&self, params: &ParamSet) -> Result<()> {
        let mut covered = 0usize;
        for (name, t) in params.prunable() {
            match self.entries.get(name) {
                None => {
                    return Err(Error::Alignment(format!(
                        "mask missing entry for prunable parameter {name:?}"
                    )))
                }
                Some(mt) if mt.shape() != t.shape() => {
                    return Err(Error::Alignment(format!(
                        "mask for {name:?}: shape {:?} vs weights {:?}",
                        mt.shape(),
                        t.shape()
                    )))
                }
                Some(_) => covered += 1,
            }
        }
        if covered != self.entries.len() {
            return Err(Error::Alignment(
                "mask covers tensors that are not prunable parameters".into(),
            ));
        }
        Ok(())
    }

    /// True when both masks keep exactly the same coordinates.
    pub fn same_zeros(&self, other: &PruneMask) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().all(|(n, mt)| {
                other
                    .entries
                    .get(n)
                    .is_some_and(|o| o.shape() == mt.shape() && o.keep() == mt.keep())
            })
    }
}
