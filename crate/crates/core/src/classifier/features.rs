use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::FeatureSpec;

/// Binary bag-of-words over lowercased tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowVectorizer {
    terms: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Sorted, distinct feature indices of the active terms.
pub type SparseBinary = Vec<usize>;

impl BowVectorizer {
    /// Keeps terms with document frequency ≥ `min_df`, the `max_vocab` most
    /// frequent (ties alphabetical), indexed alphabetically.
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a [String]>, spec: &FeatureSpec) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let uniq: BTreeSet<String> = d.iter().map(|t| t.to_lowercase()).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, c)| *c >= spec.min_df).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(spec.max_vocab);
        let mut terms: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
        terms.sort();
        let mut v = Self { terms, index: HashMap::new() };
        v.reindex();
        v
    }

    pub fn from_terms(terms: Vec<String>) -> Self {
        let mut v = Self { terms, index: HashMap::new() };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn transform(&self, tokens: &[String]) -> SparseBinary {
        let set: BTreeSet<usize> = tokens
            .iter()
            .filter_map(|t| self.index.get(&t.to_lowercase()).copied())
            .collect();
        set.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn min_df_and_cap() {
        let docs = [doc("The cat sat"), doc("the dog sat"), doc("a cat ran"), doc("The end")];
        let spec = FeatureSpec { max_vocab: 2, min_df: 2 };
        let v = BowVectorizer::fit(docs.iter().map(Vec::as_slice), &spec);
        // df: the 3, cat 2, sat 2; cap keeps "the" and alphabetically first of the tied pair
        assert_eq!(v.terms(), ["cat", "the"]);
        assert_eq!(v.transform(&doc("THE cat cat zebra")), vec![0, 1]);
        assert!(v.transform(&doc("zebra")).is_empty());
    }
}
