//! A tiny trainable transformer: token embedding, two pre-norm blocks
//! (multi-head self-attention + feed-forward), and a classification or
//! token-prediction head. Forward and backward passes are exact analytic
//! computations in `f64`, small enough that full experiment sweeps run in
//! minutes on one machine.

mod net;
mod params;

pub use net::{backward, forward, forward_collect, loss_and_grads, ActSink, CalibStats, LayerStats, RawCapture};
pub use params::{init_params, GradSet, ParamSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output head attached after the final layer norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Mean-pool over valid positions, then a linear classifier.
    Classification { classes: usize },
    /// Per-position logits over the vocabulary.
    TokenPrediction,
}

impl HeadKind {
    pub fn output_dim(&self, vocab_size: usize) -> usize {
        match self {
            HeadKind::Classification { classes } => *classes,
            HeadKind::TokenPrediction => vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub max_seq_len: usize,
    pub head: HeadKind,
}

impl ModelConfig {
    /// The desk-scale reference model used across the experiment suite.
    pub fn reference(head: HeadKind) -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_blocks: 2,
            n_heads: 4,
            ff_mult: 4,
            max_seq_len: 32,
            head,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_mult * self.d_model
    }

    /// Check divisibility constraints: heads must tile `d_model`, and every
    /// prunable weight dimension must be divisible by 8 so N:M groups with
    /// M = 8 and M = 4 tile rows exactly.
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_blocks == 0
            || self.n_heads == 0
            || self.ff_mult == 0
            || self.max_seq_len == 0
        {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (what, dim) in [("d_model", self.d_model), ("ff dim", self.ff_dim())] {
            if dim % 8 != 0 {
                return Err(Error::Config(format!(
                    "{what} {dim} not divisible by 8 (breaks N:M tiling)"
                )));
            }
        }
        if let HeadKind::Classification { classes } = self.head {
            if classes < 2 {
                return Err(Error::Config("classification head needs >= 2 classes".into()));
            }
        }
        Ok(())
    }
}

/// Labels for a batch; the variant must match the configured head.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One class index per sequence.
    PerSequence(Vec<usize>),
    /// One target per token position, `-1` meaning "not scored".
    PerToken(Vec<i64>),
}

/// A batch of token sequences, padded to a common length.
///
/// `tokens` is `[batch * seq]` row-major; positions at or beyond a
/// sequence's entry in `lengths` are padding and never influence the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<u32>,
    pub batch: usize,
    pub seq: usize,
    pub lengths: Vec<usize>,
    pub labels: Labels,
}

impl Batch {
    pub fn seq_tokens(&self, s: usize) -> &[u32] {
        &self.tokens[s * self.seq..(s + 1) * self.seq]
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.tokens.len() != self.batch * self.seq {
            return Err(Error::Dim(format!(
                "batch tokens: {} values for {}x{}",
                self.tokens.len(),
                self.batch,
                self.seq
            )));
        }
        if self.batch == 0 {
            return Err(Error::Dim("empty batch".into()));
        }
        if self.seq > cfg.max_seq_len {
            return Err(Error::Config(format!(
                "sequence length {} exceeds max_seq_len {}",
                self.seq, cfg.max_seq_len
            )));
        }
        if self.lengths.len() != self.batch {
            return Err(Error::Dim("lengths must have one entry per sequence".into()));
        }
        if self.lengths.iter().any(|&l| l == 0 || l > self.seq) {
            return Err(Error::Dim("valid lengths must be in 1..=seq".into()));
        }
        if self.tokens.iter().any(|&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Config("token id out of vocabulary".into()));
        }
        match (&self.labels, &cfg.head) {
            (Labels::PerSequence(ls), HeadKind::Classification { classes }) => {
                if ls.len() != self.batch {
                    return Err(Error::Dim("one label per sequence required".into()));
                }
                if ls.iter().any(|&l| l >= *classes) {
                    return Err(Error::Config("class label out of range".into()));
                }
            }
            (Labels::PerToken(ls), HeadKind::TokenPrediction) => {
                if ls.len() != self.batch * self.seq {
                    return Err(Error::Dim("one token label per position required".into()));
                }
                if ls.iter().any(|&l| l >= cfg.vocab_size as i64) {
                    return Err(Error::Config("token label out of vocabulary".into()));
                }
                if !ls.iter().any(|&l| l >= 0) {
                    return Err(Error::Config("batch has no scored positions".into()));
                }
            }
            _ => {
                return Err(Error::Config(
                    "label kind does not match configured head".into(),
                ));
            }
        }
        Ok(())
    }
}
