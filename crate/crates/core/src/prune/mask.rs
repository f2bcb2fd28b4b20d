//! Mask construction from importance scores, and mask application.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::ParamSet;

use super::{ImportanceScores, MaskPattern, MaskTensor, PruneMask};

/// Budget scope for unstructured masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnstructuredScope {
    /// One ranking over all prunable weights; low-scoring layers can lose
    /// every weight (layer collapse).
    Global,
    /// A separate `⌊s·n⌋` budget per tensor.
    Layerwise,
}

/// Drop the `⌊s·n⌋` lowest-scoring weights.
///
/// The budget is over all prunable weights for `Global` scope and per tensor
/// for `Layerwise`. Ties break by ascending (tensor order, flat index), so
/// masks are deterministic functions of their scores.
pub fn build_mask_unstructured(
    scores: &ImportanceScores,
    sparsity: f64,
    scope: UnstructuredScope,
) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Validation(format!(
            "sparsity {sparsity} outside [0, 1)"
        )));
    }

    let mut entries: IndexMap<String, MaskTensor> = scores
        .iter()
        .map(|(n, t)| (n.to_string(), MaskTensor::ones(t.shape().to_vec())))
        .collect();

    match scope {
        UnstructuredScope::Global => {
            let total = scores.total_weights();
            let drop = (sparsity * total as f64).floor() as usize;
            // (score, tensor rank, flat index); tensor rank follows score
            // iteration order, which mirrors parameter order.
            let mut items: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
            for (rank, (_, t)) in scores.iter().enumerate() {
                for (idx, &v) in t.data().iter().enumerate() {
                    items.push((v, rank, idx));
                }
            }
            mark_lowest_dropped(&mut items, drop);
            for &(_, rank, idx) in items.iter().take(drop) {
                let (_, mt) = entries.get_index_mut(rank).unwrap();
                mt.keep[idx] = 0;
            }
            PruneMask::new(entries, MaskPattern::UnstructuredGlobal, sparsity)
        }
        UnstructuredScope::Layerwise => {
            for (rank, (_, t)) in scores.iter().enumerate() {
                let drop = (sparsity * t.len() as f64).floor() as usize;
                let mut items: Vec<(f64, usize, usize)> = t
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(idx, &v)| (v, 0, idx))
                    .collect();
                mark_lowest_dropped(&mut items, drop);
                let (_, mt) = entries.get_index_mut(rank).unwrap();
                for &(_, _, idx) in items.iter().take(drop) {
                    mt.keep[idx] = 0;
                }
            }
            PruneMask::new(entries, MaskPattern::UnstructuredLayerwise, sparsity)
        }
    }
}

/// Partition `items` so the `drop` smallest (by score, then tensor rank,
/// then flat index) occupy the front.
fn mark_lowest_dropped(items: &mut [(f64, usize, usize)], drop: usize) {
    if drop == 0 || items.is_empty() {
        return;
    }
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    items.select_nth_unstable_by(drop - 1, cmp);
}

/// Within every contiguous group of `m` weights along each row, keep the
/// `n` highest-scoring (ties prefer the lower index) and zero the rest.
pub fn build_mask_nm(scores: &ImportanceScores, n: usize, m: usize) -> Result<PruneMask> {
    if n == 0 || n >= m {
        return Err(Error::Config(format!("N:M wants 1 <= N < M, got {n}:{m}")));
    }
    let mut entries: IndexMap<String, MaskTensor> = IndexMap::new();
    for (name, t) in scores.iter() {
        let (rows, cols) = t.dims2().map_err(|_| {
            Error::Config(format!("N:M pruning needs rank-2 tensors; {name:?} is not"))
        })?;
        if cols % m != 0 {
            return Err(Error::Config(format!(
                "{name:?}: row length {cols} not divisible by M={m}"
            )));
        }
        let mut keep = vec![0u8; rows * cols];
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            for g in 0..cols / m {
                let group = &row[g * m..(g + 1) * m];
                order.clear();
                order.extend(0..m);
                order.sort_unstable_by(|&a, &b| {
                    group[b].total_cmp(&group[a]).then(a.cmp(&b))
                });
                for &local in order.iter().take(n) {
                    keep[r * cols + g * m + local] = 1;
                }
            }
        }
        entries.insert(name.to_string(), MaskTensor::new(t.shape().to_vec(), keep)?);
    }
    PruneMask::new(entries, MaskPattern::Nm { n, m }, 1.0 - n as f64 / m as f64)
}

/// Return `params` with masked weights set to exactly 0.0. Non-prunable
/// tensors pass through untouched. Idempotent.
pub fn apply_mask(params: &ParamSet, mask: &PruneMask) -> Result<ParamSet> {
    mask.check_alignment(params)?;
    let mut out = params.clone();
    for (name, mt) in mask.iter() {
        let t = out.tensor_mut(name)?;
        for (v, &keep) in t.data_mut().iter_mut().zip(mt.keep()) {
            if keep == 0 {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::Criterion;
    use crate::tensor::Tensor;

    fn scores_of(layers: &[(&str, Vec<usize>, Vec<f64>)]) -> ImportanceScores {
        let entries = layers
            .iter()
            .map(|(n, shape, vals)| {
                (
                    n.to_string(),
                    Tensor::new(shape.clone(), vals.clone()).unwrap(),
                )
            })
            .collect();
        ImportanceScores::new(entries, Criterion::Magnitude).unwrap()
    }

    #[test]
    fn drops_lowest_magnitudes() {
        // weights [0.5, -0.1, 0.3, -0.7] -> |w| scores; s=0.5 keeps 0.5, -0.7
        let s = scores_of(&[("w", vec![1, 4], vec![0.5, 0.1, 0.3, 0.7])]);
        let mask = build_mask_unstructured(&s, 0.5, UnstructuredScope::Global).unwrap();
        assert_eq!(mask.entry("w").unwrap().keep(), &[1, 0, 0, 1]);
        assert_eq!(mask.total_zeros(), 2);
    }

    #[test]
    fn global_budget_can_collapse_a_layer() {
        let s = scores_of(&[
            ("a", vec![1, 2], vec![1.0, 0.9]),
            ("b", vec![1, 2], vec![0.3, 0.1]),
        ]);
        let global = build_mask_unstructured(&s, 0.5, UnstructuredScope::Global).unwrap();
        assert_eq!(global.entry("a").unwrap().keep(), &[1, 1]);
        assert_eq!(global.entry("b").unwrap().keep(), &[0, 0]); // collapsed
        let layerwise = build_mask_unstructured(&s, 0.5, UnstructuredScope::Layerwise).unwrap();
        assert_eq!(layerwise.entry("a").unwrap().keep(), &[1, 0]);
        assert_eq!(layerwise.entry("b").unwrap().keep(), &[1, 0]);
    }

    #[test]
    fn tie_break_is_by_tensor_then_index() {
        let s = scores_of(&[
            ("a", vec![1, 2], vec![0.5, 0.5]),
            ("b", vec![1, 2], vec![0.5, 0.5]),
        ]);
        let m = build_mask_unstructured(&s, 0.5, UnstructuredScope::Global).unwrap();
        // two drops out of four equal scores: a[0], a[1] go first
        assert_eq!(m.entry("a").unwrap().keep(), &[0, 0]);
        assert_eq!(m.entry("b").unwrap().keep(), &[1, 1]);
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let s = scores_of(&[("w", vec![2, 2], vec![0.0, 0.0, 0.0, 0.0])]);
        let m = build_mask_unstructured(&s, 0.0, UnstructuredScope::Global).unwrap();
        assert_eq!(m.total_zeros(), 0);
    }

    #[test]
    fn nm_keeps_top_n_per_group() {
        // |w| of [0.1, -0.5, 0.2, 0.05] with N=2, M=4 keeps -0.5 and 0.2
        let s = scores_of(&[("w", vec![1, 4], vec![0.1, 0.5, 0.2, 0.05])]);
        let m = build_mask_nm(&s, 2, 4).unwrap();
        assert_eq!(m.entry("w").unwrap().keep(), &[0, 1, 1, 0]);
    }

    #[test]
    fn nm_sparsity_is_exact() {
        let vals: Vec<f64> = (0..64).map(|i| (i % 13) as f64).collect();
        let s = scores_of(&[("w", vec![8, 8], vals)]);
        let m = build_mask_nm(&s, 1, 8).unwrap();
        assert_eq!(m.total_zeros(), 56);
        assert!((m.sparsity() - 0.875).abs() < 1e-15);
        assert!((m.target_sparsity() - 0.875).abs() < 1e-15);
    }

    #[test]
    fn nm_tie_prefers_lower_index() {
        let s = scores_of(&[("w", vec![1, 4], vec![0.5, 0.5, 0.5, 0.5])]);
        let m = build_mask_nm(&s, 2, 4).unwrap();
        assert_eq!(m.entry("w").unwrap().keep(), &[1, 1, 0, 0]);
    }

    #[test]
    fn nm_divisibility_enforced() {
        let s = scores_of(&[("w", vec![1, 6], vec![0.0; 6])]);
        assert!(matches!(build_mask_nm(&s, 2, 4), Err(Error::Config(_))));
    }
}
