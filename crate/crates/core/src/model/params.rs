//! Named parameter collections and deterministic initialization.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
struct Param {
    tensor: Tensor,
    prunable: bool,
}

/// Ordered map from parameter name to tensor.
///
/// Iteration order is insertion order, which [`init_params`] fixes as:
/// embeddings, then block 0..n in layer order (ln1, attention q/k/v/o, ln2,
/// ff1, ff2), then the final layer norm, then the head. The `prunable` flag
/// is true exactly for the 2-D attention and feed-forward weight matrices;
/// embeddings, layer norms, biases and the head are never pruned.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: String, tensor: Tensor, prunable: bool) -> Result<()> {
        if prunable && tensor.shape().len() != 2 {
            return Err(Error::Config(format!(
                "prunable parameter {name:?} must be rank 2"
            )));
        }
        if self
            .entries
            .insert(name.clone(), Param { tensor, prunable })
            .is_some()
        {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<(&Tensor, bool)> {
        self.entries.get(name).map(|p| (&p.tensor, p.prunable))
    }

    /// Tensor by name; errors if missing.
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Alignment(format!("missing parameter {name:?}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Alignment(format!("missing parameter {name:?}")))
    }

    /// (name, tensor, prunable) in fixed iteration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.entries
            .iter()
            .map(|(n, p)| (n.as_str(), &p.tensor, p.prunable))
    }

    /// Prunable entries only, in iteration order.
    pub fn prunable(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.iter()
            .filter(|(_, _, p)| *p)
            .map(|(n, t, _)| (n, t))
    }

    pub fn total_prunable_weights(&self) -> usize {
        self.prunable().map(|(_, t)| t.len()).sum()
    }

    /// Bit-level equality of names, order, flags, and every float.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((na, pa), (nb, pb))| {
                na == nb && pa.prunable == pb.prunable && pa.tensor.bit_eq(&pb.tensor)
            })
    }

    /// Check that `other` has identical names, shapes, and flags.
    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Alignment(format!(
                "parameter counts differ: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, pa), (nb, pb)) in self.entries.iter().zip(&other.entries) {
            if na != nb {
                return Err(Error::Alignment(format!(
                    "parameter order differs: {na:?} vs {nb:?}"
                )));
            }
            if pa.tensor.shape() != pb.tensor.shape() {
                return Err(Error::Alignment(format!(
                    "shape of {na:?} differs: {:?} vs {:?}",
                    pa.tensor.shape(),
                    pb.tensor.shape()
                )));
            }
            if pa.prunable != pb.prunable {
                return Err(Error::Alignment(format!("prunable flag of {na:?} differs")));
            }
        }
        Ok(())
    }

    /// Copy values from `pre` for every entry whose name and shape match.
    ///
    /// Entries that exist only here (or whose shapes differ, e.g. a fresh
    /// classification head adopted onto a token-prediction checkpoint) keep
    /// their current values. Returns the names that were copied.
    pub fn adopt_backbone(&mut self, pre: &ParamSet) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, param) in self.entries.iter_mut() {
            if let Some(src) = pre.entries.get(name) {
                if src.tensor.shape() == param.tensor.shape() {
                    param.tensor = src.tensor.clone();
                    copied.push(name.clone());
                }
            }
        }
        copied
    }
}

/// Gradients keyed exactly like a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradSet {
    entries: IndexMap<String, Tensor>,
}

impl GradSet {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let entries = params
            .iter()
            .map(|(n, t, _)| (n.to_string(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut Tensor {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("gradient entry {name:?} missing"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for t in self.entries.values_mut() {
            for v in t.data_mut() {
                *v *= c;
            }
        }
    }
}

/// Deterministically initialize parameters for a config.
///
/// Weight matrices draw uniform values in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
/// (embeddings use `d_model` as the fan), layer-norm gains start at one,
/// and all offsets at zero. Draws consume the generator in parameter
/// iteration order, so equal (config, seed) pairs give bit-identical sets.
pub fn init_params(cfg: &ModelConfig, rng: &mut Rng) -> Result<ParamSet> {
    cfg.validate()?;
    let d = cfg.d_model;
    let f = cfg.ff_dim();
    let out = cfg.head.output_dim(cfg.vocab_size);

    let mut p = ParamSet::empty();
    let uniform = |shape: Vec<usize>, fan_in: usize, rng: &mut Rng| {
        let s = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_in(-s, s)).collect();
        Tensor::new(shape, data)
    };

    p.insert(
        "embed.tok.weight".into(),
        uniform(vec![cfg.vocab_size, d], d, rng)?,
        false,
    )?;
    p.insert(
        "embed.pos.weight".into(),
        uniform(vec![cfg.max_seq_len, d], d, rng)?,
        false,
    )?;
    for b in 0..cfg.n_blocks {
        p.insert(format!("block{b}.ln1.gamma"), Tensor::full(vec![d], 1.0), false)?;
        p.insert(format!("block{b}.ln1.beta"), Tensor::zeros(vec![d]), false)?;
        for w in ["wq", "wk", "wv", "wo"] {
            p.insert(
                format!("block{b}.attn.{w}"),
                uniform(vec![d, d], d, rng)?,
                true,
            )?;
        }
        p.insert(format!("block{b}.ln2.gamma"), Tensor::full(vec![d], 1.0), false)?;
        p.insert(format!("block{b}.ln2.beta"), Tensor::zeros(vec![d]), false)?;
        p.insert(
            format!("block{b}.ff1.weight"),
            uniform(vec![f, d], d, rng)?,
            true,
        )?;
        p.insert(
            format!("block{b}.ff2.weight"),
            uniform(vec![d, f], f, rng)?,
            true,
        )?;
    }
    p.insert("final_ln.gamma".into(), Tensor::full(vec![d], 1.0), false)?;
    p.insert("final_ln.beta".into(), Tensor::zeros(vec![d]), false)?;
    p.insert("head.weight".into(), uniform(vec![out, d], d, rng)?, false)?;
    p.insert("head.bias".into(), Tensor::zeros(vec![out]), false)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;

    fn cfg() -> ModelConfig {
        ModelConfig::reference(HeadKind::Classification { classes: 4 })
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = init_params(&cfg(), &mut Rng::new(5)).unwrap();
        let b = init_params(&cfg(), &mut Rng::new(5)).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn different_seed_differs() {
        let a = init_params(&cfg(), &mut Rng::new(5)).unwrap();
        let b = init_params(&cfg(), &mut Rng::new(6)).unwrap();
        assert!(!a.bit_eq(&b));
    }

    #[test]
    fn divisibility_violation_rejected() {
        let mut c = cfg();
        c.d_model = 65;
        c.n_heads = 2;
        assert!(matches!(
            init_params(&c, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn prunable_flags_cover_attention_and_ff_only() {
        let p = init_params(&cfg(), &mut Rng::new(0)).unwrap();
        for (name, _, prunable) in p.iter() {
            let expect = name.contains(".attn.") || name.contains(".ff");
            assert_eq!(prunable, expect, "{name}");
        }
        // embeddings and classifier are excluded even though they are 2-D
        assert!(!p.get("embed.tok.weight").unwrap().1);
        assert!(!p.get("head.weight").unwrap().1);
    }

    #[test]
    fn adopt_backbone_skips_mismatched_head() {
        let pre = init_params(
            &ModelConfig::reference(HeadKind::TokenPrediction),
            &mut Rng::new(1),
        )
        .unwrap();
        let mut down = init_params(&cfg(), &mut Rng::new(2)).unwrap();
        let fresh_head = down.tensor("head.weight").unwrap().clone();
        let copied = down.adopt_backbone(&pre);
        assert!(copied.iter().any(|n| n == "block0.attn.wq"));
        assert!(!copied.iter().any(|n| n == "head.weight"));
        assert!(down.tensor("head.weight").unwrap().bit_eq(&fresh_head));
        assert!(down
            .tensor("block1.ff1.weight")
            .unwrap()
            .bit_eq(pre.tensor("block1.ff1.weight").unwrap()));
    }
}
