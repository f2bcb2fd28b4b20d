//! Data-volume family: a fixed classification corpus subsampled at ratio r.
//!
//! Every content token carries a hidden group (two latent bits), and a
//! hidden relation maps group pairs to a binary outcome. The pre-training
//! corpus spells the relation out: sequences of (x, y, r) triples whose r
//! token is determined by the groups of x and y. Masked-token pre-training
//! therefore stores the token-to-group map and the relation table in the
//! network's attention and feed-forward weights.
//!
//! Downstream items are plain token sequences; the class composes the
//! relation over the pair at (PAIR_POS, PAIR_POS+1) with the low latent bit
//! of the token at B_POS. A model that retains the pre-trained relation
//! circuit only has to learn the readout, which few examples support; a
//! model whose circuit was damaged must re-learn pairwise structure, which
//! few examples do not.

use crate::error::{Error, Result};
use crate::model::HeadKind;
use crate::rng::Rng;

use super::{EvalGroup, Item, ItemLabel, MlmSpec, TaskData, CONTENT_START, EVAL_ITEMS};

pub const SEQ_LEN: usize = 12;
pub const CLASSES: usize = 4;
const GROUPS: usize = 4;
/// Content tokens used by this family (30 per group).
const FAMILY_TOKENS: usize = 120;
/// The two relation-outcome tokens.
const REL_TOKENS: [u32; 2] = [200, 201];
const PRETRAIN_SEQS: usize = 4000;
const MLM_PROB: f64 = 0.15;
/// Relation slots in the pre-training triples are predicted half the time.
const REL_MLM_PROB: f64 = 0.5;
/// Downstream items are `[x, y, MASK, fillers...]`: one relation query in
/// the first triple's slots, so the pooled features carry exactly one
/// relation-indicative position. The low label bit reads the filler at
/// B_POS.
const PAIR_POS: usize = 0;
const REL_SLOT: usize = 2;
const B_POS: usize = 9;

/// The hidden labeling rule: a seeded token-to-group assignment and a
/// hidden group pairing. The relation holds when the second token's group
/// is the pairing of the first's, a match-style predicate attention can
/// express once embeddings encode groups.
#[derive(Debug, Clone)]
pub struct SubsampleRule {
    /// group id (0..4) per token, indexed by token - CONTENT_START
    token_group: Vec<usize>,
    /// tokens belonging to each group
    group_tokens: Vec<Vec<u32>>,
    /// rel(x, y) = [group(y) == pairing[group(x)]]
    pairing: [usize; GROUPS],
}

impl SubsampleRule {
    pub fn generate(rng: &mut Rng) -> Self {
        let n_content = FAMILY_TOKENS;
        let mut tokens: Vec<u32> =
            (CONTENT_START..CONTENT_START + FAMILY_TOKENS as u32).collect();
        rng.shuffle(&mut tokens);
        let per_group = n_content / GROUPS;
        let mut token_group = vec![0usize; n_content];
        let mut group_tokens = vec![Vec::with_capacity(per_group); GROUPS];
        for (i, &t) in tokens.iter().enumerate() {
            let g = (i / per_group).min(GROUPS - 1);
            token_group[(t - CONTENT_START) as usize] = g;
            group_tokens[g].push(t);
        }
        for g in &mut group_tokens {
            g.sort_unstable();
        }
        let mut pairing: Vec<usize> = (0..GROUPS).collect();
        rng.shuffle(&mut pairing);
        Self {
            token_group,
            group_tokens,
            pairing: [pairing[0], pairing[1], pairing[2], pairing[3]],
        }
    }

    pub fn group_of(&self, token: u32) -> usize {
        self.token_group[(token - CONTENT_START) as usize]
    }

    /// Latent bits of a token: group = (a << 1) | b.
    fn bits_of(&self, token: u32) -> (usize, usize) {
        let g = self.group_of(token);
        (g >> 1, g & 1)
    }

    pub fn relate(&self, x: u32, y: u32) -> usize {
        usize::from(self.group_of(y) == self.pairing[self.group_of(x)])
    }

    /// Class from three token-level features: the relation over the pair at
    /// (PAIR_POS, PAIR_POS+1) gives the high bit, the `b` attribute at
    /// B_POS the low bit.
    pub fn label(&self, tokens: &[u32]) -> usize {
        let rel = self.relate(tokens[PAIR_POS], tokens[PAIR_POS + 1]);
        let (_, b) = self.bits_of(tokens[B_POS]);
        2 * rel + b
    }

    fn uniform_token(&self, rng: &mut Rng) -> u32 {
        let g = rng.below(GROUPS);
        *rng.choose(&self.group_tokens[g])
    }

    /// Draw a pair whose relation outcome is a fair coin: the second token
    /// matches the pairing of the first with probability 1/2, otherwise it
    /// comes uniformly from the three non-matching groups.
    fn balanced_pair(&self, rng: &mut Rng) -> (u32, u32) {
        let x = self.uniform_token(rng);
        let matching = self.pairing[self.group_of(x)];
        let gy = if rng.bernoulli(0.5) {
            matching
        } else {
            let mut wrong = rng.below(GROUPS - 1);
            if wrong >= matching {
                wrong += 1;
            }
            wrong
        };
        (x, *rng.choose(&self.group_tokens[gy]))
    }

    /// A downstream sequence: a relation query (x, y, MASK) followed by
    /// uniform content fillers.
    pub fn sample_sequence(&self, rng: &mut Rng) -> Vec<u32> {
        let mut seq: Vec<u32> = (0..SEQ_LEN).map(|_| self.uniform_token(rng)).collect();
        let (x, y) = self.balanced_pair(rng);
        seq[PAIR_POS] = x;
        seq[PAIR_POS + 1] = y;
        seq[REL_SLOT] = super::MASK;
        seq
    }

    /// A pre-training sequence. Half the corpus carries relation triples;
    /// the other half is group-pure runs, whose masked-token signal pushes
    /// embeddings to cluster by group in the first place.
    pub fn pretrain_sequence(&self, rng: &mut Rng) -> Vec<u32> {
        if rng.bernoulli(0.5) {
            let g = rng.below(GROUPS);
            return (0..SEQ_LEN)
                .map(|_| *rng.choose(&self.group_tokens[g]))
                .collect();
        }
        let mut seq = Vec::with_capacity(SEQ_LEN);
        for _ in 0..SEQ_LEN / 3 {
            let (x, y) = self.balanced_pair(rng);
            seq.push(x);
            seq.push(y);
            seq.push(REL_TOKENS[self.relate(x, y)]);
        }
        seq
    }

    fn sample_item(&self, rng: &mut Rng) -> Item {
        let tokens = self.sample_sequence(rng);
        let label = self.label(&tokens);
        Item {
            tokens,
            label: ItemLabel::Class(label),
        }
    }
}

/// Generate the data-volume task at ratio `r`.
///
/// The hidden rule, the full training corpus of `base_size` items, and the
/// evaluation set are functions of `rng` alone, so they are identical for
/// every `r`; the train split is a uniform random subset of exactly
/// `⌊r·base_size⌋` items (the full corpus in shuffled order at r = 1).
pub fn gen_subsample_task(base_size: usize, r: f64, rng: &mut Rng) -> Result<TaskData> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Validation(format!(
            "data ratio must be in (0, 1], got {r}"
        )));
    }
    if base_size == 0 {
        return Err(Error::Validation("base_size must be positive".into()));
    }
    let rule = SubsampleRule::generate(&mut rng.fork("rule"));

    let mut corpus_rng = rng.fork("corpus");
    let full: Vec<Item> = (0..base_size)
        .map(|_| rule.sample_item(&mut corpus_rng))
        .collect();

    let mut eval_rng = rng.fork("eval");
    let eval: Vec<Item> = (0..EVAL_ITEMS)
        .map(|_| rule.sample_item(&mut eval_rng))
        .collect();

    let mut pre_rng = rng.fork("pretrain");
    let pretrain: Vec<Vec<u32>> = (0..PRETRAIN_SEQS)
        .map(|_| rule.pretrain_sequence(&mut pre_rng))
        .collect();

    let take = ((r * base_size as f64).floor() as usize).max(1);
    let mut subset_rng = rng.fork("subset");
    let idx = subset_rng.sample_indices(base_size, take.min(base_size));
    let train: Vec<Item> = idx.into_iter().map(|i| full[i].clone()).collect();

    // relation slots are predicted often; everything else at the base rate
    let rel_slots = (2..SEQ_LEN).step_by(3).collect();
    Ok(TaskData {
        head: HeadKind::Classification { classes: CLASSES },
        pretrain,
        mlm: MlmSpec::with_focus(MLM_PROB, rel_slots, REL_MLM_PROB),
        train,
        eval_groups: vec![EvalGroup {
            name: "eval".into(),
            items: eval,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_size_is_floor_of_ratio() {
        let t = gen_subsample_task(1000, 0.10, &mut Rng::new(3)).unwrap();
        assert_eq!(t.train.len(), 100);
    }

    #[test]
    fn full_ratio_is_whole_corpus() {
        let t = gen_subsample_task(200, 1.0, &mut Rng::new(3)).unwrap();
        assert_eq!(t.train.len(), 200);
        let u = gen_subsample_task(200, 1.0, &mut Rng::new(3)).unwrap();
        assert_eq!(t.train, u.train);
    }

    #[test]
    fn same_seed_same_subsets() {
        let a = gen_subsample_task(500, 0.25, &mut Rng::new(9)).unwrap();
        let b = gen_subsample_task(500, 0.25, &mut Rng::new(9)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval_groups[0].items, b.eval_groups[0].items);
    }

    #[test]
    fn eval_set_invariant_to_ratio() {
        let a = gen_subsample_task(500, 0.10, &mut Rng::new(9)).unwrap();
        let b = gen_subsample_task(500, 1.0, &mut Rng::new(9)).unwrap();
        assert_eq!(a.eval_groups[0].items, b.eval_groups[0].items);
        assert_eq!(a.pretrain, b.pretrain);
    }

    #[test]
    fn out_of_range_ratio_rejected() {
        assert!(gen_subsample_task(100, 0.0, &mut Rng::new(0)).is_err());
        assert!(gen_subsample_task(100, 1.5, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn labels_are_balanced_enough() {
        let t = gen_subsample_task(2000, 1.0, &mut Rng::new(1)).unwrap();
        let mut counts = [0usize; CLASSES];
        for it in &t.train {
            let ItemLabel::Class(c) = it.label else { panic!() };
            counts[c] += 1;
        }
        for &c in &counts {
            assert!(c > 2000 / CLASSES / 2, "class counts {counts:?}");
        }
    }

    #[test]
    fn pretrain_triples_encode_the_relation() {
        let rule = SubsampleRule::generate(&mut Rng::new(5));
        let mut rng = Rng::new(6);
        for _ in 0..100 {
            let seq = rule.pretrain_sequence(&mut rng);
            for k in 0..SEQ_LEN / 3 {
                let (x, y, r) = (seq[3 * k], seq[3 * k + 1], seq[3 * k + 2]);
                assert_eq!(r, REL_TOKENS[rule.relate(x, y)]);
            }
        }
    }

    #[test]
    fn relation_outcomes_are_balanced_in_generation() {
        let rule = SubsampleRule::generate(&mut Rng::new(7));
        let mut rng = Rng::new(8);
        let mut ones = 0usize;
        for _ in 0..2000 {
            let seq = rule.sample_sequence(&mut rng);
            ones += rule.relate(seq[PAIR_POS], seq[PAIR_POS + 1]);
        }
        assert!((800..1200).contains(&ones), "ones = {ones}");
    }
}
