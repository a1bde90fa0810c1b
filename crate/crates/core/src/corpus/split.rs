use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, DEV, TEST, TRAIN};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.dev, self.test];
        if all.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid(format!("split ratios must be non-negative: {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios must sum to 1: {all:?}")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` by `weights` (ties go to the earlier slot).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = total - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// Stratified train/dev/test assignment, deterministic in `seed`.
pub fn split(mut dataset: LabeledDataset, ratios: SplitRatios, seed: u64) -> Result<LabeledDataset> {
    ratios.validate()?;
    if dataset.len() < 3 {
        return Err(Error::invalid(format!(
            "dataset {} has {} records; splitting needs at least 3",
            dataset.name,
            dataset.len()
        )));
    }
    let weights = [ratios.train, ratios.dev, ratios.test];
    let sizes = apportion(dataset.len(), &weights);

    let mut met: Vec<&str> = Vec::new();
    let mut lit: Vec<&str> = Vec::new();
    for r in &dataset.records {
        if r.is_metaphorical() {
            met.push(&r.id);
        } else {
            lit.push(&r.id);
        }
    }
    let mut rng = substream(seed, "split");
    met.shuffle(&mut rng);
    lit.shuffle(&mut rng);

    let size_weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let met_counts = if sizes.iter().sum::<usize>() == 0 {
        vec![0; 3]
    } else {
        apportion(met.len(), &size_weights)
    };

    let mut splits = BTreeMap::new();
    let (mut mi, mut li) = (0, 0);
    for (k, name) in [TRAIN, DEV, TEST].into_iter().enumerate() {
        let n_met = met_counts[k];
        let n_lit = sizes[k] - n_met;
        let ids: BTreeSet<String> = met[mi..mi + n_met]
            .iter()
            .chain(&lit[li..li + n_lit])
            .map(|s| s.to_string())
            .collect();
        mi += n_met;
        li += n_lit;
        splits.insert(name.to_string(), ids);
    }
    dataset.splits = splits;
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DatasetName, Label, TokenizedSentence};
    use proptest::prelude::*;

    fn synthetic(n_met: usize, n_lit: usize) -> LabeledDataset {
        let mut recs = Vec::new();
        for i in 0..n_met {
            recs.push(TokenizedSentence::labeled(format!("m{i}"), "a b c", "custom", Label::Metaphorical, [1]));
        }
        for i in 0..n_lit {
            recs.push(TokenizedSentence::labeled(format!("l{i}"), "a b c", "custom", Label::Literal, [1]));
        }
        LabeledDataset::new(DatasetName::Custom, recs).unwrap()
    }

    #[test]
    fn moh_x_sized_split() {
        // 646 records with the MOH-X-like balance of 315/331
        let ds = split(synthetic(315, 331), SplitRatios::default(), 42).unwrap();
        let sizes: Vec<usize> = [TRAIN, DEV, TEST].iter().map(|n| ds.splits[*n].len()).collect();
        for (got, want) in sizes.iter().zip([517usize, 64, 65]) {
            assert!(got.abs_diff(want) <= 1, "sizes {sizes:?}");
        }
        let p = 315.0 / 646.0;
        for name in [TRAIN, DEV, TEST] {
            let recs = ds.split_records(name).unwrap();
            let met = recs.iter().filter(|r| r.is_metaphorical()).count() as f64;
            assert!((met - recs.len() as f64 * p).abs() <= 1.0, "{name}");
        }
    }

    #[test]
    fn all_train() {
        let ratios = SplitRatios { train: 1.0, dev: 0.0, test: 0.0 };
        let ds = split(synthetic(5, 5), ratios, 1).unwrap();
        assert_eq!(ds.splits[TRAIN].len(), 10);
        assert!(ds.splits[DEV].is_empty() && ds.splits[TEST].is_empty());
    }

    #[test]
    fn rejects_tiny_and_bad_ratios() {
        assert!(split(synthetic(1, 1), SplitRatios::default(), 1).is_err());
        let bad = SplitRatios { train: 0.5, dev: 0.1, test: 0.1 };
        assert!(split(synthetic(5, 5), bad, 1).is_err());
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = split(synthetic(30, 40), SplitRatios::default(), 7).unwrap();
        let b = split(synthetic(30, 40), SplitRatios::default(), 7).unwrap();
        let c = split(synthetic(30, 40), SplitRatios::default(), 8).unwrap();
        assert_eq!(a.splits, b.splits);
        assert_ne!(a.splits, c.splits);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n_met in 0usize..60, n_lit in 0usize..60, seed in any::<u64>(),
                                a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(n_met + n_lit >= 3);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let ratios = SplitRatios { train: lo, dev: hi - lo, test: 1.0 - hi };
            let ds = split(synthetic(n_met, n_lit), ratios, seed).unwrap();
            let mut all = BTreeSet::new();
            let mut total = 0;
            for ids in ds.splits.values() {
                total += ids.len();
                all.extend(ids.iter().cloned());
            }
            prop_assert_eq!(total, n_met + n_lit);
            prop_assert_eq!(all.len(), n_met + n_lit);
        }
    }
}
