//! Brute-force sort oracles for every mask builder, plus structural
//! properties of N:M masks.

use indexmap::IndexMap;
use proptest::prelude::*;

use prunelab_core::prune::{
    build_mask_nm, build_mask_unstructured, Criterion, ImportanceScores, PruneMask,
    UnstructuredScope,
};
use prunelab_core::rng::Rng;
use prunelab_core::Tensor;

fn scores_from(layers: Vec<(String, Vec<usize>, Vec<f64>)>) -> ImportanceScores {
    let entries: IndexMap<String, Tensor> = layers
        .into_iter()
        .map(|(n, shape, vals)| (n, Tensor::new(shape, vals).unwrap()))
        .collect();
    ImportanceScores::new(entries, Criterion::Magnitude).unwrap()
}

/// Oracle: stable full sort of (score, tensor rank, index); the first
/// `drop` entries are zeroed. Written independently of the builder, which
/// uses partial selection.
fn oracle_global(scores: &ImportanceScores, sparsity: f64) -> Vec<Vec<u8>> {
    let total: usize = scores.iter().map(|(_, t)| t.len()).sum();
    let drop = (sparsity * total as f64).floor() as usize;
    let mut flat: Vec<(f64, usize, usize)> = Vec::new();
    for (rank, (_, t)) in scores.iter().enumerate() {
        for (i, &v) in t.data().iter().enumerate() {
            flat.push((v, rank, i));
        }
    }
    flat.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut keeps: Vec<Vec<u8>> = scores.iter().map(|(_, t)| vec![1u8; t.len()]).collect();
    for &(_, rank, i) in flat.iter().take(drop) {
        keeps[rank][i] = 0;
    }
    keeps
}

fn oracle_layerwise(scores: &ImportanceScores, sparsity: f64) -> Vec<Vec<u8>> {
    scores
        .iter()
        .map(|(_, t)| {
            let drop = (sparsity * t.len() as f64).floor() as usize;
            let mut idx: Vec<usize> = (0..t.len()).collect();
            idx.sort_by(|&a, &b| t.data()[a].total_cmp(&t.data()[b]).then(a.cmp(&b)));
            let mut keep = vec![1u8; t.len()];
            for &i in idx.iter().take(drop) {
                keep[i] = 0;
            }
            keep
        })
        .collect()
}

/// Oracle for one N:M group: an element is kept when fewer than N others
/// beat it (higher score, or equal score at a lower index).
fn oracle_nm_group(group: &[f64], n: usize) -> Vec<u8> {
    group
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let beaten_by = group
                .iter()
                .enumerate()
                .filter(|&(j, &u)| u > v || (u == v && j < i))
                .count();
            u8::from(beaten_by < n)
        })
        .collect()
}

fn assert_matches_oracle(mask: &PruneMask, oracle: &[Vec<u8>], scores: &ImportanceScores) {
    for (rank, (name, _)) in scores.iter().enumerate() {
        assert_eq!(
            mask.entry(name).unwrap().keep(),
            &oracle[rank][..],
            "tensor {name}"
        );
    }
}

fn random_layers(rng: &mut Rng, tie_prone: bool) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let n_layers = 1 + rng.below(4);
    (0..n_layers)
        .map(|i| {
            let rows = 1 + rng.below(16);
            let cols = 8 * (1 + rng.below(4)); // 8..32, M-divisible
            let vals: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    if tie_prone {
                        // coarse grid forces plenty of exact ties
                        (rng.below(4) as f64) * 0.25
                    } else {
                        rng.uniform()
                    }
                })
                .collect();
            (format!("layer{i}"), vec![rows, cols], vals)
        })
        .collect()
}

#[test]
fn thousand_randomized_instances_match_oracles() {
    let mut rng = Rng::new(0xACCE);
    let mut instances = 0usize;
    while instances < 1000 {
        let tie_prone = instances % 3 == 0;
        let scores = scores_from(random_layers(&mut rng, tie_prone));
        let sparsity = [0.0, 0.1, 0.25, 0.5, 0.875, 0.99][instances % 6];

        let global = build_mask_unstructured(&scores, sparsity, UnstructuredScope::Global).unwrap();
        assert_matches_oracle(&global, &oracle_global(&scores, sparsity), &scores);

        let layer = build_mask_unstructured(&scores, sparsity, UnstructuredScope::Layerwise).unwrap();
        assert_matches_oracle(&layer, &oracle_layerwise(&scores, sparsity), &scores);

        let (n, m) = [(1, 8), (3, 8), (7, 8), (1, 4), (2, 4), (3, 4)][instances % 6];
        let nm = build_mask_nm(&scores, n, m).unwrap();
        for (name, t) in scores.iter() {
            let keep = nm.entry(name).unwrap().keep();
            let cols = t.shape()[1];
            for (g, group) in t.data().chunks(m).enumerate() {
                let want = oracle_nm_group(group, n);
                let got = &keep[g * m..(g + 1) * m];
                assert_eq!(got, &want[..], "{name} group {g} (cols {cols})");
            }
        }
        instances += 1;
    }
}

#[test]
fn global_zero_count_is_exact_floor() {
    let mut rng = Rng::new(99);
    for _ in 0..50 {
        let scores = scores_from(random_layers(&mut rng, false));
        let total = scores.total_weights();
        for s in [0.0, 0.2, 1.0 / 3.0, 0.8125, 0.999] {
            let m = build_mask_unstructured(&scores, s, UnstructuredScope::Global).unwrap();
            assert_eq!(m.total_zeros(), (s * total as f64).floor() as usize);
        }
    }
}

#[test]
fn layerwise_zero_count_is_exact_per_tensor() {
    let mut rng = Rng::new(98);
    let scores = scores_from(random_layers(&mut rng, false));
    for s in [0.1, 0.5, 0.9] {
        let m = build_mask_unstructured(&scores, s, UnstructuredScope::Layerwise).unwrap();
        for (name, t) in scores.iter() {
            assert_eq!(
                m.entry(name).unwrap().zeros(),
                (s * t.len() as f64).floor() as usize
            );
        }
    }
}

proptest! {
    #[test]
    fn nm_windows_always_hold_exactly_n(
        seed in 0u64..500,
        n in 1usize..8,
    ) {
        let m = 8usize;
        prop_assume!(n < m);
        let mut rng = Rng::new(seed);
        let rows = 1 + rng.below(8);
        let vals: Vec<f64> = (0..rows * 16).map(|_| rng.uniform_in(-2.0, 2.0).abs()).collect();
        let scores = scores_from(vec![("w".into(), vec![rows, 16], vals)]);
        let mask = build_mask_nm(&scores, n, m).unwrap();
        let keep = mask.entry("w").unwrap().keep();
        for row in keep.chunks(16) {
            for window in row.chunks(m) {
                let nonzeros: usize = window.iter().map(|&k| k as usize).sum();
                prop_assert_eq!(nonzeros, n);
            }
        }
        prop_assert!((mask.sparsity() - (1.0 - n as f64 / m as f64)).abs() < 1e-15);
    }

    #[test]
    fn magnitude_mask_invariant_under_positive_rescale(
        seed in 0u64..500,
        scale in 0.001f64..1000.0,
    ) {
        let mut rng = Rng::new(seed);
        // distinct magnitudes so the argsort is unambiguous
        let mut vals: Vec<f64> = (0..64).map(|i| (i as f64 + 1.0) * 0.01).collect();
        rng.shuffle(&mut vals);
        let base = scores_from(vec![("w".into(), vec![8, 8], vals.clone())]);
        let scaled = scores_from(vec![(
            "w".into(),
            vec![8, 8],
            vals.iter().map(|v| v * scale).collect(),
        )]);
        for s in [0.25, 0.5, 0.875] {
            let a = build_mask_unstructured(&base, s, UnstructuredScope::Global).unwrap();
            let b = build_mask_unstructured(&scaled, s, UnstructuredScope::Global).unwrap();
            prop_assert!(a.same_zeros(&b));
        }
    }
}
