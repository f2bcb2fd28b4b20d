//! Synthetic task families with controllable difficulty knobs, plus
//! ingestion of external score tables.
//!
//! Three families cover three ways a downstream task can get harder:
//!
//! - `subsample`: a fixed classification corpus where the knob is the
//!   fraction of training data available for fine-tuning;
//! - `multidomain`: a token-level translation analog between synthetic
//!   "languages", where the knob is how much of each domain the model saw
//!   during pre-training and fine-tuning;
//! - `contextqa`: fact-recall questions where the knob is whether the
//!   relevant fact is prepended to the question (open book) or must come
//!   from pre-trained knowledge (closed book).
//!
//! All generators are pure functions of their parameters and a seeded
//! generator. Evaluation sets never depend on the difficulty knob within a
//! family, so metric differences are attributable to training difficulty.

mod contextqa;
mod multidomain;
mod scores;
mod subsample;

pub use contextqa::{contextqa_extraction_oracle, gen_contextqa_task};
pub use multidomain::{gen_multidomain_task, Domain, MultidomainRules, Shots};
pub use scores::{load_score_table, read_score_table, ScoreRow, ScoreTable};
pub use subsample::{gen_subsample_task, SubsampleRule};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, HeadKind, Labels};
use crate::prune::CalibrationSet;
use crate::rng::Rng;

/// Reserved token ids; content tokens start at [`CONTENT_START`].
pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const SEP: u32 = 2;
pub const QMARK: u32 = 3;
pub const FACTMARK: u32 = 4;
pub const REL: u32 = 5;
/// Four language tags for the multidomain family.
pub const LANG_TAG: [u32; 4] = [6, 7, 8, 9];
pub const CONTENT_START: u32 = 16;
pub const VOCAB_SIZE: usize = 256;

/// Evaluation items per task (per domain where a breakdown applies).
pub const EVAL_ITEMS: usize = 2000;

/// One labeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub tokens: Vec<u32>,
    pub label: ItemLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ItemLabel {
    Class(usize),
    /// Per-position targets aligned with `tokens`; -1 = not scored.
    Tokens(Vec<i64>),
}

/// Named evaluation split; the first group of a task is its primary metric.
#[derive(Debug, Clone)]
pub struct EvalGroup {
    pub name: String,
    pub items: Vec<Item>,
}

/// Masking recipe for the masked-token pre-training objective.
///
/// Selected positions are labeled with their original token and corrupted
/// with the usual mix: replaced by [`MASK`] with `mask_frac`, by a random
/// content token with `random_frac`, and otherwise left in place. The keep
/// case matters: it forces predictive features at clean positions, which is
/// what downstream fine-tuning reads.
#[derive(Debug, Clone)]
pub struct MlmSpec {
    /// Selection probability for ordinary positions.
    pub mask_prob: f64,
    /// Positions selected with `focus_prob` instead (e.g. answer slots,
    /// translation targets).
    pub focus_positions: Vec<usize>,
    pub focus_prob: f64,
    /// Of the selected positions: fraction replaced by [`MASK`] ...
    pub mask_frac: f64,
    /// ... fraction replaced by a random content token; the rest keep
    /// their original token.
    pub random_frac: f64,
}

impl MlmSpec {
    pub fn uniform(mask_prob: f64) -> Self {
        Self {
            mask_prob,
            focus_positions: Vec::new(),
            focus_prob: 0.0,
            mask_frac: 0.8,
            random_frac: 0.1,
        }
    }

    pub fn with_focus(mask_prob: f64, focus_positions: Vec<usize>, focus_prob: f64) -> Self {
        Self {
            focus_positions,
            focus_prob,
            ..Self::uniform(mask_prob)
        }
    }
}

/// Fully materialized data for one task configuration.
#[derive(Debug, Clone)]
pub struct TaskData {
    /// Head the downstream model needs.
    pub head: HeadKind,
    /// Unlabeled sequences for masked-token pre-training.
    pub pretrain: Vec<Vec<u32>>,
    pub mlm: MlmSpec,
    /// Fine-tuning items; empty for zero-shot protocols.
    pub train: Vec<Item>,
    /// Evaluation splits; `eval_groups[0]` is the primary metric.
    pub eval_groups: Vec<EvalGroup>,
}

impl TaskData {
    pub fn primary_eval(&self) -> &EvalGroup {
        &self.eval_groups[0]
    }
}

/// Task family and knob settings. Seeds live outside the spec: generators
/// are pure functions of `(spec, rng)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Subsample {
        base_size: usize,
        data_ratio: f64,
    },
    Multidomain {
        majority_n: usize,
        minority_n: usize,
        #[serde(default = "default_finetune_majority")]
        finetune_majority_n: usize,
        #[serde(default = "default_finetune_minority")]
        finetune_minority_n: usize,
        eval_domain: Domain,
        shots: Shots,
    },
    Contextqa {
        open_book: bool,
    },
}

fn default_finetune_majority() -> usize {
    256
}

fn default_finetune_minority() -> usize {
    32
}

impl TaskSpec {
    /// Short human-readable knob description, used as the record key.
    pub fn knob(&self) -> String {
        match self {
            TaskSpec::Subsample { data_ratio, .. } => format!("r={data_ratio:.2}"),
            TaskSpec::Multidomain {
                eval_domain, shots, ..
            } => format!("domain={eval_domain},shots={shots}"),
            TaskSpec::Contextqa { open_book } => format!("open_book={open_book}"),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            TaskSpec::Subsample { .. } => "subsample",
            TaskSpec::Multidomain { .. } => "multidomain",
            TaskSpec::Contextqa { .. } => "contextqa",
        }
    }

    /// Full record key: family plus knob.
    pub fn record_key(&self) -> String {
        format!("{}@{}", self.family(), self.knob())
    }
}

/// Build the task data for a spec. The generator stream is forked from
/// `rng` per family, so different knobs of the same family share corpora
/// where the family defines them as shared (e.g. the subsample eval set).
pub fn build_task(spec: &TaskSpec, rng: &Rng) -> Result<TaskData> {
    match spec {
        TaskSpec::Subsample {
            base_size,
            data_ratio,
        } => gen_subsample_task(*base_size, *data_ratio, &mut rng.fork("subsample")),
        TaskSpec::Multidomain {
            majority_n,
            minority_n,
            finetune_majority_n,
            finetune_minority_n,
            eval_domain,
            shots,
        } => gen_multidomain_task(
            *majority_n,
            *minority_n,
            *finetune_majority_n,
            *finetune_minority_n,
            *eval_domain,
            *shots,
            &mut rng.fork("multidomain"),
        ),
        TaskSpec::Contextqa { open_book } => {
            gen_contextqa_task(*open_book, &mut rng.fork("contextqa"))
        }
    }
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

/// Assemble items (all the same length and label kind) into a batch.
pub fn make_batch(items: &[&Item]) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::Validation("cannot batch zero items".into()));
    }
    let seq = items[0].tokens.len();
    if items.iter().any(|it| it.tokens.len() != seq) {
        return Err(Error::Validation("items in a batch must share a length".into()));
    }
    let mut tokens = Vec::with_capacity(items.len() * seq);
    let mut lengths = Vec::with_capacity(items.len());
    for it in items {
        tokens.extend_from_slice(&it.tokens);
        lengths.push(seq);
    }
    let labels = match &items[0].label {
        ItemLabel::Class(_) => {
            let mut ls = Vec::with_capacity(items.len());
            for it in items {
                match &it.label {
                    ItemLabel::Class(c) => ls.push(*c),
                    ItemLabel::Tokens(_) => {
                        return Err(Error::Validation("mixed label kinds in batch".into()))
                    }
                }
            }
            Labels::PerSequence(ls)
        }
        ItemLabel::Tokens(_) => {
            let mut ls = Vec::with_capacity(items.len() * seq);
            for it in items {
                match &it.label {
                    ItemLabel::Tokens(t) => ls.extend_from_slice(t),
                    ItemLabel::Class(_) => {
                        return Err(Error::Validation("mixed label kinds in batch".into()))
                    }
                }
            }
            Labels::PerToken(ls)
        }
    };
    Ok(Batch {
        tokens,
        batch: items.len(),
        seq,
        lengths,
        labels,
    })
}

/// Sample a fine-tuning batch: `batch_size` distinct items (or all of them
/// when fewer exist), drawn uniformly.
pub fn sample_train_batch(items: &[Item], batch_size: usize, rng: &mut Rng) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::Validation("no training items to sample".into()));
    }
    let k = batch_size.min(items.len());
    let idx = rng.sample_indices(items.len(), k);
    let refs: Vec<&Item> = idx.iter().map(|&i| &items[i]).collect();
    make_batch(&refs)
}

/// Build one masked-token batch from `batch_size` sampled corpus sequences.
///
/// Every sequence gets at least one selected position.
pub fn sample_mlm_batch(
    corpus: &[Vec<u32>],
    mlm: &MlmSpec,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Batch> {
    if corpus.is_empty() {
        return Err(Error::Validation("empty pre-training corpus".into()));
    }
    let k = batch_size.min(corpus.len());
    let idx = rng.sample_indices(corpus.len(), k);
    let seq = corpus[idx[0]].len();
    let mut tokens = Vec::with_capacity(k * seq);
    let mut labels = vec![-1i64; k * seq];
    let mut corrupt = |tokens: &mut Vec<u32>, labels: &mut Vec<i64>, base: usize, p: usize, orig: u32, rng: &mut Rng| {
        labels[base + p] = orig as i64;
        let r = rng.uniform();
        if r < mlm.mask_frac {
            tokens[base + p] = MASK;
        } else if r < mlm.mask_frac + mlm.random_frac {
            tokens[base + p] =
                CONTENT_START + rng.below(VOCAB_SIZE - CONTENT_START as usize) as u32;
        } // otherwise keep the original token
    };
    for (row, &i) in idx.iter().enumerate() {
        let src = &corpus[i];
        debug_assert_eq!(src.len(), seq, "corpus sequences must share a length");
        let base = row * seq;
        tokens.extend_from_slice(src);
        let mut selected_any = false;
        for p in 0..seq {
            let is_focus = mlm.focus_positions.contains(&p);
            let prob = if is_focus { mlm.focus_prob } else { mlm.mask_prob };
            if rng.bernoulli(prob) {
                corrupt(&mut tokens, &mut labels, base, p, src[p], rng);
                selected_any = true;
            }
        }
        if !selected_any {
            let p = rng.below(seq);
            corrupt(&mut tokens, &mut labels, base, p, src[p], rng);
        }
    }
    Ok(Batch {
        tokens,
        batch: k,
        seq,
        lengths: vec![seq; k],
        labels: Labels::PerToken(labels),
    })
}

/// Fixed calibration stream: `n_batches` masked-token batches drawn from the
/// pre-training corpus with a generator forked off `rng`.
pub fn calibration_batches(
    task: &TaskData,
    n_batches: usize,
    batch_size: usize,
    rng: &Rng,
) -> Result<CalibrationSet> {
    let mut r = rng.fork("calibration");
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        batches.push(sample_mlm_batch(&task.pretrain, &task.mlm, batch_size, &mut r)?);
    }
    Ok(CalibrationSet::new(batches))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_from_class_items() {
        let items = vec![
            Item {
                tokens: vec![16, 17, 18],
                label: ItemLabel::Class(1),
            },
            Item {
                tokens: vec![19, 20, 21],
                label: ItemLabel::Class(0),
            },
        ];
        let refs: Vec<&Item> = items.iter().collect();
        let b = make_batch(&refs).unwrap();
        assert_eq!(b.batch, 2);
        assert_eq!(b.seq, 3);
        assert_eq!(b.labels, Labels::PerSequence(vec![1, 0]));
    }

    #[test]
    fn mlm_batch_masks_at_least_one_position() {
        let corpus = vec![vec![16u32; 8]; 10];
        let spec = MlmSpec::uniform(0.01); // tiny prob: forces the fallback
        let mut rng = Rng::new(0);
        for _ in 0..20 {
            let b = sample_mlm_batch(&corpus, &spec, 4, &mut rng).unwrap();
            let Labels::PerToken(ls) = &b.labels else {
                panic!()
            };
            for s in 0..b.batch {
                let row = &ls[s * b.seq..(s + 1) * b.seq];
                assert!(row.iter().any(|&l| l >= 0));
            }
        }
    }

    #[test]
    fn mlm_masking_is_deterministic() {
        let corpus: Vec<Vec<u32>> = (0..32)
            .map(|i| (0..8).map(|j| 16 + ((i * 8 + j) % 64) as u32).collect())
            .collect();
        let spec = MlmSpec::uniform(0.2);
        let a = sample_mlm_batch(&corpus, &spec, 8, &mut Rng::new(5)).unwrap();
        let b = sample_mlm_batch(&corpus, &spec, 8, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
