//! Labeled metaphor datasets, unlabeled literal corpora and their on-disk formats.

mod fetch;
mod jsonl;
mod loaders;
mod plaintext;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pos::PosTag;
use crate::text::tokenize;

pub use fetch::{
    cache_path, fetch_topic_sentences, split_sentences, CachedSentence, HttpTransport, Transport,
    WikipediaFetcher,
};
pub use jsonl::{read_jsonl, read_sentences, write_jsonl, write_sentences};
pub use loaders::{load_moh_x, load_trofi, load_trofi_x, LoadMode, LoadReport, Loaded, RowIssue};
pub use plaintext::{load_plaintext_corpus, PlaintextLoad};
pub use split::{split, SplitRatios};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Metaphorical,
    Literal,
}

impl Label {
    pub fn from_flag(flag: bool) -> Self {
        if flag {
            Label::Metaphorical
        } else {
            Label::Literal
        }
    }

    pub fn is_metaphorical(self) -> bool {
        self == Label::Metaphorical
    }
}

/// TroFi-X metaphor slot: two free-POS argument tokens and one verb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    T1,
    T2,
    V,
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Slot::T1 => "T1",
            Slot::T2 => "T2",
            Slot::V => "V",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub index: usize,
    pub slot: Slot,
}

/// One sentence with word tokens and optional annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub pos: Option<Vec<PosTag>>,
    /// Sorted, distinct token positions flagged metaphorical.
    pub metaphor_indices: Vec<usize>,
    #[serde(default)]
    pub slots: Vec<SlotAssignment>,
    pub label: Option<Label>,
    pub source: String,
}

impl TokenizedSentence {
    pub fn unlabeled(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            id: id.into(),
            tokens: tokenize(&text),
            text,
            pos: None,
            metaphor_indices: Vec::new(),
            slots: Vec::new(),
            label: None,
            source: source.into(),
        }
    }

    pub fn labeled(
        id: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
        label: Label,
        metaphor_indices: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut s = Self::unlabeled(id, text, source);
        s.label = Some(label);
        s.metaphor_indices = metaphor_indices
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        s
    }

    pub fn is_metaphorical(&self) -> bool {
        self.label.is_some_and(Label::is_metaphorical)
    }

    pub fn slot_of(&self, index: usize) -> Option<Slot> {
        self.slots.iter().find(|s| s.index == index).map(|s| s.slot)
    }

    pub fn pos_of(&self, index: usize) -> Option<PosTag> {
        self.pos.as_ref().and_then(|p| p.get(index)).copied()
    }

    /// Checks the structural invariants every sentence must satisfy.
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if let Some(i) = self.metaphor_indices.iter().find(|&&i| i >= n) {
            return Err(Error::Format(format!(
                "sentence {}: metaphor index {i} out of range for {n} tokens",
                self.id
            )));
        }
        if self.metaphor_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format(format!(
                "sentence {}: metaphor indices must be sorted and distinct",
                self.id
            )));
        }
        if let Some(pos) = &self.pos {
            if pos.len() != n {
                return Err(Error::Format(format!(
                    "sentence {}: {} POS tags for {n} tokens",
                    self.id,
                    pos.len()
                )));
            }
        }
        if let Some(s) = self.slots.iter().find(|s| !self.metaphor_indices.contains(&s.index)) {
            return Err(Error::Format(format!(
                "sentence {}: slot {} points at unflagged index {}",
                self.id, s.slot, s.index
            )));
        }
        if self.is_metaphorical() && self.metaphor_indices.is_empty() {
            return Err(Error::Format(format!(
                "sentence {}: metaphorical sentence without metaphor indices",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    MohX,
    Trofi,
    TrofiX,
    Custom,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::MohX => "moh-x",
            DatasetName::Trofi => "trofi",
            DatasetName::TrofiX => "trofi-x",
            DatasetName::Custom => "custom",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "moh-x" | "mohx" => Ok(DatasetName::MohX),
            "trofi" => Ok(DatasetName::Trofi),
            "trofi-x" | "trofix" => Ok(DatasetName::TrofiX),
            "custom" => Ok(DatasetName::Custom),
            other => Err(Error::invalid(format!("unknown dataset `{other}`"))),
        }
    }
}

pub const TRAIN: &str = "train";
pub const DEV: &str = "dev";
pub const TEST: &str = "test";

/// A labeled dataset with optional named splits over record ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: DatasetName,
    pub records: Vec<TokenizedSentence>,
    #[serde(default)]
    pub splits: BTreeMap<String, BTreeSet<String>>,
}

impl LabeledDataset {
    pub fn new(name: DatasetName, records: Vec<TokenizedSentence>) -> Result<Self> {
        let ds = Self {
            name,
            records,
            splits: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if r.label.is_none() {
                return Err(Error::Format(format!("dataset record {} has no label", r.id)));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Format(format!("duplicate record id {}", r.id)));
            }
        }
        let mut seen: HashSet<&str> = HashSet::new();
        for (name, members) in &self.splits {
            for id in members {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Format(format!("split {name} references unknown id {id}")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Format(format!("id {id} appears in more than one split")));
                }
            }
        }
        if !self.splits.is_empty() && seen.len() != ids.len() {
            return Err(Error::Format(format!(
                "splits cover {} of {} records",
                seen.len(),
                ids.len()
            )));
        }
        Ok(())
    }

    /// Records of split `name`, in dataset order.
    pub fn split_records(&self, name: &str) -> Result<Vec<TokenizedSentence>> {
        let members = self
            .splits
            .get(name)
            .ok_or_else(|| Error::invalid(format!("dataset {} has no split `{name}`", self.name)))?;
        Ok(self
            .records
            .iter()
            .filter(|r| members.contains(&r.id))
            .cloned()
            .collect())
    }

    pub fn label_counts(&self) -> (usize, usize) {
        count_labels(&self.records)
    }
}

/// (metaphorical, literal) counts.
pub fn count_labels(records: &[TokenizedSentence]) -> (usize, usize) {
    let met = records.iter().filter(|r| r.is_metaphorical()).count();
    let lit = records
        .iter()
        .filter(|r| r.label == Some(Label::Literal))
        .count();
    (met, lit)
}

/// Unlabeled sentences drawn from one source (Wikipedia topic, poetry, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteralCorpus {
    pub source: String,
    pub sentences: Vec<TokenizedSentence>,
}

impl LiteralCorpus {
    pub fn new(source: impl Into<String>, sentences: Vec<TokenizedSentence>) -> Result<Self> {
        let corpus = Self {
            source: source.into(),
            sentences,
        };
        for s in &corpus.sentences {
            s.validate()?;
            if !s.metaphor_indices.is_empty() || s.label.is_some() {
                return Err(Error::Format(format!(
                    "corpus sentence {} carries annotations; literal corpora are unlabeled",
                    s.id
                )));
            }
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}
