//! Majority/minority family: token-level translation between synthetic
//! languages.
//!
//! A latent symbol sequence is rendered into a language by a per-language
//! substitution table (over a disjoint token alphabet) and a position
//! permutation. Two language pairs exist: the majority pair dominates the
//! pre-training corpus, the minority pair appears `minority_n` times. A
//! translation item shows the target-language tag and the source rendering,
//! then asks for the target rendering at masked positions; the metric is
//! token-level accuracy over those positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadKind;
use crate::rng::Rng;

use super::{EvalGroup, Item, ItemLabel, MlmSpec, TaskData, CONTENT_START, EVAL_ITEMS, LANG_TAG, MASK, SEP};

/// Latent sequence length; items are `1 + LZ + 1 + LZ` tokens long.
pub const LZ: usize = 6;
pub const ITEM_LEN: usize = 2 * LZ + 2;
/// Latent alphabet size per language.
const SYMBOLS: usize = 48;
/// Tokens reserved per language alphabet.
const LANG_SPAN: usize = 60;
const N_LANGS: usize = 4;
const MLM_PROB: f64 = 0.15;
/// Masking probability on the target half during pre-training.
const TARGET_MLM_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Majority,
    Minority,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Majority => write!(f, "majority"),
            Domain::Minority => write!(f, "minority"),
        }
    }
}

/// Whether the downstream protocol fine-tunes at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shots {
    Zero,
    Few,
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::Zero => write!(f, "zero"),
            Shots::Few => write!(f, "few"),
        }
    }
}

/// Per-language substitution tables and position permutations.
#[derive(Debug, Clone)]
pub struct MultidomainRules {
    /// symbol -> token, per language
    subst: Vec<Vec<u32>>,
    /// rendered position i shows latent position perm[i]
    perm: Vec<Vec<usize>>,
}

impl MultidomainRules {
    pub fn generate(rng: &mut Rng) -> Self {
        let mut subst = Vec::with_capacity(N_LANGS);
        let mut perm = Vec::with_capacity(N_LANGS);
        for lang in 0..N_LANGS {
            let base = CONTENT_START + (lang * LANG_SPAN) as u32;
            let mut alphabet: Vec<u32> = (base..base + LANG_SPAN as u32).collect();
            rng.shuffle(&mut alphabet);
            alphabet.truncate(SYMBOLS);
            subst.push(alphabet);
            let mut p: Vec<usize> = (0..LZ).collect();
            rng.shuffle(&mut p);
            perm.push(p);
        }
        Self { subst, perm }
    }

    /// Render a latent sequence in a language.
    pub fn render(&self, latent: &[usize], lang: usize) -> Vec<u32> {
        (0..LZ)
            .map(|i| self.subst[lang][latent[self.perm[lang][i]]])
            .collect()
    }

    /// Invert a rendering back to the latent sequence.
    pub fn decode(&self, rendered: &[u32], lang: usize) -> Result<Vec<usize>> {
        let mut latent = vec![usize::MAX; LZ];
        for (i, &tok) in rendered.iter().enumerate() {
            let sym = self.subst[lang]
                .iter()
                .position(|&t| t == tok)
                .ok_or_else(|| {
                    Error::Validation(format!("token {tok} is not in language {lang}"))
                })?;
            latent[self.perm[lang][i]] = sym;
        }
        Ok(latent)
    }

    /// (source, target) languages of a pair: 0 = majority, 1 = minority.
    pub fn pair_langs(pair: usize) -> (usize, usize) {
        match pair {
            0 => (0, 1),
            _ => (2, 3),
        }
    }

    fn sample_latent(&self, rng: &mut Rng) -> Vec<usize> {
        (0..LZ).map(|_| rng.below(SYMBOLS)).collect()
    }

    /// Pre-training sequence: `[tgt tag] src SEP tgt`, fully visible.
    pub fn pretrain_sequence(&self, pair: usize, rng: &mut Rng) -> Vec<u32> {
        let (a, b) = Self::pair_langs(pair);
        let z = self.sample_latent(rng);
        let mut seq = Vec::with_capacity(ITEM_LEN);
        seq.push(LANG_TAG[b]);
        seq.extend(self.render(&z, a));
        seq.push(SEP);
        seq.extend(self.render(&z, b));
        seq
    }

    /// Translation item: source visible, target positions masked and scored.
    pub fn translation_item(&self, pair: usize, rng: &mut Rng) -> Item {
        let (a, b) = Self::pair_langs(pair);
        let z = self.sample_latent(rng);
        let mut tokens = Vec::with_capacity(ITEM_LEN);
        tokens.push(LANG_TAG[b]);
        tokens.extend(self.render(&z, a));
        tokens.push(SEP);
        let target = self.render(&z, b);
        let mut labels = vec![-1i64; ITEM_LEN];
        for (i, &t) in target.iter().enumerate() {
            tokens.push(MASK);
            labels[2 + LZ + i] = t as i64;
        }
        Item {
            tokens,
            label: ItemLabel::Tokens(labels),
        }
    }
}

/// Generate the multidomain task.
///
/// The pre-training corpus holds exactly `majority_n` majority-pair and
/// `minority_n` minority-pair sequences (shuffled together); fine-tune and
/// eval splits are separated per domain, with the splits of the chosen
/// `eval_domain` driving the primary metric. `Shots::Zero` returns an empty
/// fine-tune split.
pub fn gen_multidomain_task(
    majority_n: usize,
    minority_n: usize,
    finetune_majority_n: usize,
    finetune_minority_n: usize,
    eval_domain: Domain,
    shots: Shots,
    rng: &mut Rng,
) -> Result<TaskData> {
    if majority_n <= minority_n || minority_n == 0 {
        return Err(Error::Validation(format!(
            "need majority_n > minority_n > 0, got {majority_n}:{minority_n}"
        )));
    }
    let rules = MultidomainRules::generate(&mut rng.fork("rules"));

    let mut pre_rng = rng.fork("pretrain");
    let mut pretrain = Vec::with_capacity(majority_n + minority_n);
    for _ in 0..majority_n {
        pretrain.push(rules.pretrain_sequence(0, &mut pre_rng));
    }
    for _ in 0..minority_n {
        pretrain.push(rules.pretrain_sequence(1, &mut pre_rng));
    }
    pre_rng.shuffle(&mut pretrain);

    let mut ft_rng = rng.fork("finetune");
    let finetune_counts = [finetune_majority_n, finetune_minority_n];
    let mut finetune: Vec<Vec<Item>> = Vec::with_capacity(2);
    for pair in 0..2 {
        finetune.push(
            (0..finetune_counts[pair])
                .map(|_| rules.translation_item(pair, &mut ft_rng))
                .collect(),
        );
    }

    let mut eval_rng = rng.fork("eval");
    let mut evals: Vec<Vec<Item>> = Vec::with_capacity(2);
    for pair in 0..2 {
        evals.push(
            (0..EVAL_ITEMS)
                .map(|_| rules.translation_item(pair, &mut eval_rng))
                .collect(),
        );
    }

    let primary = match eval_domain {
        Domain::Majority => 0,
        Domain::Minority => 1,
    };
    let names = ["majority", "minority"];
    let mut eval_groups = vec![EvalGroup {
        name: names[primary].into(),
        items: evals[primary].clone(),
    }];
    let other = 1 - primary;
    eval_groups.push(EvalGroup {
        name: names[other].into(),
        items: evals[other].clone(),
    });

    let train = match shots {
        Shots::Zero => Vec::new(),
        Shots::Few => finetune[primary].clone(),
    };

    // During pre-training, mask the target rendering aggressively so the
    // model learns the cross-language mapping, not just token statistics.
    let mlm = MlmSpec::with_focus(
        MLM_PROB,
        (2 + LZ..ITEM_LEN).collect(),
        TARGET_MLM_PROB,
    );

    Ok(TaskData {
        head: HeadKind::TokenPrediction,
        pretrain,
        mlm,
        train,
        eval_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_counts_are_exact() {
        let t = gen_multidomain_task(300, 30, 64, 16, Domain::Minority, Shots::Few, &mut Rng::new(4))
            .unwrap();
        assert_eq!(t.pretrain.len(), 330);
        assert_eq!(t.train.len(), 16);
    }

    #[test]
    fn zero_shot_has_empty_finetune_split() {
        let t = gen_multidomain_task(300, 30, 64, 16, Domain::Minority, Shots::Zero, &mut Rng::new(4))
            .unwrap();
        assert!(t.train.is_empty());
    }

    #[test]
    fn latent_rule_round_trip() {
        let rules = MultidomainRules::generate(&mut Rng::new(11));
        let mut rng = Rng::new(12);
        for pair in 0..2 {
            let (a, b) = MultidomainRules::pair_langs(pair);
            for _ in 0..50 {
                let z: Vec<usize> = (0..LZ).map(|_| rng.below(SYMBOLS)).collect();
                let ra = rules.render(&z, a);
                let rb = rules.render(&z, b);
                assert_eq!(rules.decode(&ra, a).unwrap(), z);
                assert_eq!(rules.decode(&rb, b).unwrap(), z);
            }
        }
    }

    #[test]
    fn translation_item_masks_exactly_the_target() {
        let rules = MultidomainRules::generate(&mut Rng::new(2));
        let item = rules.translation_item(0, &mut Rng::new(3));
        assert_eq!(item.tokens.len(), ITEM_LEN);
        let ItemLabel::Tokens(ls) = &item.label else { panic!() };
        for i in 0..ITEM_LEN {
            if i >= 2 + LZ {
                assert_eq!(item.tokens[i], MASK);
                assert!(ls[i] >= 0);
            } else {
                assert_ne!(item.tokens[i], MASK);
                assert_eq!(ls[i], -1);
            }
        }
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(gen_multidomain_task(10, 10, 4, 4, Domain::Majority, Shots::Few, &mut Rng::new(0))
            .is_err());
        assert!(gen_multidomain_task(10, 0, 4, 4, Domain::Majority, Shots::Few, &mut Rng::new(0))
            .is_err());
    }

    #[test]
    fn languages_use_disjoint_alphabets() {
        let rules = MultidomainRules::generate(&mut Rng::new(5));
        let mut rng = Rng::new(6);
        let z: Vec<usize> = (0..LZ).map(|_| rng.below(SYMBOLS)).collect();
        let r0 = rules.render(&z, 0);
        let r1 = rules.render(&z, 1);
        for t in &r0 {
            assert!((CONTENT_START..CONTENT_START + LANG_SPAN as u32).contains(t));
        }
        for t in &r1 {
            let lo = CONTENT_START + LANG_SPAN as u32;
            assert!((lo..lo + LANG_SPAN as u32).contains(t));
        }
    }
}
