use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, train_classifier, ClassificationMetrics, ClassifierConfig, MetricDeltas};
use crate::corpus::{Label, TokenizedSentence};
use crate::error::{Error, Result};
use crate::par::ExecutionMode;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmented {
    pub records: Vec<TokenizedSentence>,
    pub added_metaphorical: usize,
    pub added_literal: usize,
    /// Pool ids skipped because their text occurs in held-out data.
    pub leaks_replaced: Vec<String>,
}

fn key(s: &TokenizedSentence) -> String {
    s.tokens.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>().join(" ")
}

fn draw(
    pool: &[TokenizedSentence],
    k: usize,
    held_out: &HashSet<String>,
    stream: &str,
    seed: u64,
    strict: bool,
    leaks: &mut Vec<String>,
) -> Result<Vec<TokenizedSentence>> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut substream(seed, stream));
    let mut out = Vec::with_capacity(k);
    for i in order {
        if out.len() == k {
            break;
        }
        let s = &pool[i];
        if held_out.contains(&key(s)) {
            if strict {
                return Err(Error::invalid(format!("pool sentence {} leaks into held-out data: {}", s.id, s.text)));
            }
            leaks.push(s.id.clone());
            continue;
        }
        out.push(s.clone());
    }
    if out.len() < k {
        return Err(Error::invalid(format!(
            "{stream} pool has {} usable sentences, {} short of {k}",
            out.len(),
            k - out.len()
        )));
    }
    Ok(out)
}

/// Appends `k` system metaphors and `k` literal sentences to `train`.
/// Candidates whose text appears in `held_out` are skipped, or rejected
/// outright when `strict`.
pub fn build_augmented_set(
    train: &[TokenizedSentence],
    system: &[TokenizedSentence],
    literal_pool: &[TokenizedSentence],
    held_out: &[TokenizedSentence],
    k: usize,
    seed: u64,
    strict: bool,
) -> Result<Augmented> {
    if k == 0 {
        return Err(Error::invalid("k_per_class must be at least 1"));
    }
    let held: HashSet<String> = held_out.iter().map(key).collect();
    let mut leaks = Vec::new();
    let met = draw(system, k, &held, "augment-system", seed, strict, &mut leaks)?;
    let lit = draw(literal_pool, k, &held, "augment-literal", seed, strict, &mut leaks)?;
    let mut records = train.to_vec();
    for (i, s) in met.into_iter().enumerate() {
        records.push(TokenizedSentence::labeled(
            format!("aug-met-{i:05}"),
            s.text,
            s.source,
            Label::Metaphorical,
            s.metaphor_indices,
        ));
    }
    for (i, s) in lit.into_iter().enumerate() {
        records.push(TokenizedSentence::labeled(format!("aug-lit-{i:05}"), s.text, s.source, Label::Literal, []));
    }
    Ok(Augmented {
        records,
        added_metaphorical: k,
        added_literal: k,
        leaks_replaced: leaks,
    })
}

/// `train` plus `n` copies of randomly chosen training instances.
pub fn duplicate_instances(train: &[TokenizedSentence], n: usize, seed: u64) -> Result<Vec<TokenizedSentence>> {
    if train.is_empty() && n > 0 {
        return Err(Error::invalid("cannot duplicate from an empty training set"));
    }
    let mut rng = substream(seed, "augment-duplicate");
    let mut out = train.to_vec();
    for j in 0..n {
        let mut s = train[rng.gen_range(0..train.len())].clone();
        s.id = format!("{}-dup{j:05}", s.id);
        out.push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationResult {
    pub added: usize,
    pub base: ClassificationMetrics,
    pub augmented: ClassificationMetrics,
    pub duplication: ClassificationMetrics,
    pub delta_augmented: MetricDeltas,
    pub delta_duplication: MetricDeltas,
}

/// Trains base, augmented and duplication arms with one config and scores all three on `eval`.
pub fn run_augmentation_experiment(
    base_train: &[TokenizedSentence],
    augmented_train: &[TokenizedSentence],
    eval: &[TokenizedSentence],
    config: &ClassifierConfig,
    mode: ExecutionMode,
) -> Result<AugmentationResult> {
    let aug_ids: HashSet<&str> = augmented_train.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = base_train.iter().find(|s| !aug_ids.contains(s.id.as_str())) {
        return Err(Error::invalid(format!("augmented set lacks base record {}", s.id)));
    }
    let eval_ids: HashSet<&str> = eval.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = augmented_train.iter().find(|s| eval_ids.contains(s.id.as_str())) {
        return Err(Error::invalid(format!("evaluation record {} is also in training data", s.id)));
    }
    let added = augmented_train.len() - base_train.len();
    let dup = duplicate_instances(base_train, added, config.seed)?;
    let h = config.threshold_h;
    let arm = |train: &[TokenizedSentence], name: &str| -> Result<ClassificationMetrics> {
        let clf = train_classifier(train, "augmentation", name, config, mode)?;
        evaluate(&clf, eval, h, mode)
    };
    let base = arm(base_train, "base")?;
    let augmented = arm(augmented_train, "augmented")?;
    let duplication = arm(&dup, "duplication")?;
    Ok(AugmentationResult {
        added,
        delta_augmented: augmented.delta(&base),
        delta_duplication: duplication.delta(&base),
        base,
        augmented,
        duplication,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn counts_balance_and_determinism() {
        let train = synthetic::marker_dataset(20, "blazed", 1);
        let sys = synthetic::constant_metaphor_corpus(300, "devoured", 2);
        let lit = synthetic::literal_corpus(300, "wiki", 3);
        let a = build_augmented_set(&train, &sys, &lit, &[], 214, 9, true).unwrap();
        assert_eq!(a.records.len(), 20 + 428);
        let added = &a.records[20..];
        assert_eq!(crate::corpus::count_labels(added), (214, 214));
        let b = build_augmented_set(&train, &sys, &lit, &[], 214, 9, true).unwrap();
        assert_eq!(a, b);
        assert!(build_augmented_set(&train, &sys, &lit, &[], 0, 9, true).is_err());
        assert!(build_augmented_set(&train, &sys[..10], &lit, &[], 214, 9, true).is_err());
    }

    #[test]
    fn planted_leak_is_caught() {
        let sys = synthetic::constant_metaphor_corpus(50, "devoured", 2);
        let lit = synthetic::literal_corpus(50, "wiki", 3);
        let test = vec![lit[7].clone()];
        assert!(build_augmented_set(&[], &sys, &lit, &test, 50, 1, true).is_err());
        let a = build_augmented_set(&[], &sys, &lit, &test, 40, 1, false).unwrap();
        let leaked = crate::text::normalize(&lit[7].text);
        assert!(a.records.iter().all(|r| crate::text::normalize(&r.text) != leaked));
    }
}
